//! Stream framing and the connection preamble.
//!
//! On connect the client sends `"DSKH" | 1 | u16 len | identity` and the hub
//! answers with the same shape carrying its own identity. Everything after
//! that is a sequence of share frames. The preamble is not authenticated;
//! link identity is taken as given, as the threat model assumes.

use std::io::{self, Read, Write};

use dske_core::protocol::{frame_len, Identity};

pub const HELLO_MAGIC: &[u8; 4] = b"DSKH";
pub const HELLO_VERSION: u8 = 1;
/// Largest frame accepted from a peer.
pub const MAX_FRAME: usize = 64 << 20;

fn invalid(msg: &str) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.to_string())
}

pub fn write_hello<W: Write>(w: &mut W, id: &Identity) -> io::Result<()> {
    let mut buf = Vec::with_capacity(7 + id.len());
    buf.extend_from_slice(HELLO_MAGIC);
    buf.push(HELLO_VERSION);
    buf.extend_from_slice(&(id.len() as u16).to_be_bytes());
    buf.extend_from_slice(id.as_bytes());
    w.write_all(&buf)?;
    w.flush()
}

pub fn read_hello<R: Read>(r: &mut R) -> io::Result<Identity> {
    let mut head = [0u8; 7];
    r.read_exact(&mut head)?;
    if &head[..4] != HELLO_MAGIC || head[4] != HELLO_VERSION {
        return Err(invalid("bad hello"));
    }
    let len = u16::from_be_bytes([head[5], head[6]]) as usize;
    let mut id = vec![0u8; len];
    r.read_exact(&mut id)?;
    Identity::new(&id).map_err(|_| invalid("bad identity in hello"))
}

/// Reads one share frame; `None` on a clean end of stream.
pub fn read_frame<R: Read>(r: &mut R) -> io::Result<Option<Vec<u8>>> {
    let mut buf = Vec::with_capacity(256);
    let mut byte = [0u8; 1];
    loop {
        match r.read(&mut byte)? {
            0 if buf.is_empty() => return Ok(None),
            0 => return Err(io::ErrorKind::UnexpectedEof.into()),
            _ => buf.push(byte[0]),
        }
        match frame_len(&buf) {
            Err(_) => return Err(invalid("bad frame header")),
            Ok(None) => continue,
            Ok(Some(total)) => {
                if total > MAX_FRAME {
                    return Err(invalid("frame too large"));
                }
                let have = buf.len();
                buf.resize(total, 0);
                r.read_exact(&mut buf[have..])?;
                return Ok(Some(buf));
            }
        }
    }
}
