use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::rngs::StdRng;
use rand::SeedableRng;

use dske::agent::{agent_start, api_call, ApiRequest};
use dske::bench::{default_grid, parse_grid, run_bench};
use dske::config::{ClientConfig, HubConfig};
use dske::core::bounds;
use dske::core::field::FieldId;
use dske::core::protocol::Identity;
use dske::core::psrd::EntropySource;
use dske::hub::hub_serve;
use dske::scenario::{render, ScenarioFile};
use dske::tables::provision_pair;
use dske::Error;

#[derive(Parser)]
#[command(name = "dske", version, about = "Distributed symmetric key establishment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a hub daemon.
    Hub {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a client key agent.
    Agent {
        #[arg(long)]
        config: PathBuf,
    },
    /// Ask a running agent for a key shared with `peer`.
    Request {
        #[arg(long)]
        peer: String,
        #[arg(long, default_value_t = 256)]
        bits: u64,
        /// Fetch a key the peer already established, instead of starting one.
        #[arg(long)]
        key_id: Option<u64>,
        /// Agent API address; read from `--config` when omitted.
        #[arg(long)]
        api: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Write matched table files for one client/hub pair.
    GenPsrd {
        #[arg(long)]
        hub: String,
        #[arg(long)]
        client: String,
        /// Elements per direction.
        #[arg(long)]
        len: u64,
        /// Deterministic tables for testing; system randomness otherwise.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 128)]
        field_bits: u32,
        #[arg(long, default_value = ".")]
        hub_dir: PathBuf,
        #[arg(long, default_value = ".")]
        client_dir: PathBuf,
    },
    /// Run an adversarial scenario in the in-process simulator.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Print the security and robustness figures for a parameter set.
    Bounds {
        #[arg(long)]
        n: u64,
        #[arg(long)]
        k: u64,
        #[arg(long)]
        m: u64,
        #[arg(long, default_value_t = 128)]
        field_bits: u32,
        #[arg(long, default_value_t = 1)]
        msg_blocks: u64,
        #[arg(long, default_value_t = 0)]
        compromised: u64,
    },
    /// Time share generation and reconstruction over an `n:k` grid.
    Bench {
        /// Comma-separated `n:k` cells.
        #[arg(long)]
        grid: Option<String>,
        #[arg(long, default_value_t = 1 << 20)]
        secret_bits: u64,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn field_of(bits: u32) -> Result<FieldId, Error> {
    match bits {
        8 => Ok(FieldId::Gf8),
        128 => Ok(FieldId::Gf128),
        b => Err(Error::Config(format!("field bits must be 8 or 128, got {b}"))),
    }
}

fn identity(s: &str) -> Result<Identity, Error> {
    s.parse::<Identity>().map_err(|e| Error::Config(e.to_string()))
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Hub { config } => hub_serve(&HubConfig::load(&config)?),
        Command::Agent { config } => {
            let agent = agent_start(&ClientConfig::load(&config)?)?;
            log::info!("agent {} serving keys on {}", agent.identity(), agent.api_addr());
            agent.wait();
            Ok(())
        }
        Command::Request { peer, bits, key_id, api, config } => {
            let addr = match (api, config) {
                (Some(a), _) => a,
                (None, Some(c)) => ClientConfig::load(&c)?.api_listen,
                (None, None) => return Err(Error::Config("need --api or --config".into())),
            };
            let request = match key_id {
                Some(key_id) => ApiRequest::GetKeyById { peer, key_id, size_bits: bits },
                None => ApiRequest::GetKey { peer, size_bits: bits },
            };
            let reply = api_call(&addr, &request)?;
            println!("{reply}");
            if reply.get("ok").and_then(|v| v.as_bool()) != Some(true) {
                return Err(Error::Request(
                    reply.get("error").and_then(|v| v.as_str()).unwrap_or("request failed").to_string(),
                ));
            }
            Ok(())
        }
        Command::GenPsrd { hub, client, len, seed, field_bits, hub_dir, client_dir } => {
            let mut src = match seed {
                Some(s) => EntropySource::seeded(s),
                None => EntropySource::system(StdRng::from_os_rng()),
            };
            let paths = provision_pair(
                &identity(&client)?,
                &identity(&hub)?,
                len,
                field_of(field_bits)?,
                &mut src,
                &client_dir,
                &hub_dir,
            )?;
            for p in paths {
                println!("{}", p.display());
            }
            Ok(())
        }
        Command::Simulate { scenario } => {
            let file = ScenarioFile::load(&scenario)?;
            let report = file.run()?;
            print!("{}", render(&file, &report));
            Ok(())
        }
        Command::Bounds { n, k, m, field_bits, msg_blocks, compromised } => {
            let r = bounds::report(n, k, m, field_bits, msg_blocks, compromised)
                .map_err(|e| Error::Config(e.to_string()))?;
            let rows = [
                ("n", r.n.to_string()),
                ("k", r.k.to_string()),
                ("m", r.m.to_string()),
                ("field bits", r.field_bits.to_string()),
                ("message blocks", r.msg_blocks.to_string()),
                ("compromised hubs", r.compromised.to_string()),
                ("subsets C(n,k)", r.subsets.to_string()),
                ("epsilon secret", format!("{:.6e}", r.epsilon_secret)),
                ("epsilon auth", format!("{:.6e}", r.epsilon_auth)),
                ("epsilon total", format!("{:.6e}", r.epsilon_total)),
                ("security loss bits", format!("{:.4}", r.security_loss_bits)),
                ("security bits", format!("{:.4}", r.security_bits)),
                ("robust", r.robustness_ok.to_string()),
            ];
            for (name, value) in &rows {
                println!("{name:<20}{value:>24}");
            }
            println!();
            for (name, value) in &rows {
                println!("{}={value}", name.split(" C(").next().unwrap_or(name).replace(' ', "_"));
            }
            Ok(())
        }
        Command::Bench { grid, secret_bits, repeats, csv } => {
            let grid = match grid {
                Some(g) => parse_grid(&g)?,
                None => default_grid(),
            };
            let report = run_bench(&grid, secret_bits, repeats)?;
            print!("{}", report.to_table());
            if let Some(path) = csv {
                std::fs::write(&path, report.to_csv())?;
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
