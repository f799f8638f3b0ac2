//! Packet stream container.
//!
//! Header (little endian): magic `GNC1`, u8 version, u8 m, u16 g, u32 n,
//! u32 K, u32 payload_len, u64 seed. Then records: u32 byte length followed
//! by one serialized packet.

use gammanc::gf::Field;
use gammanc::srlnc::CodedPacket;
use gammanc::Error;

pub const MAGIC: &[u8; 4] = b"GNC1";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 4 + 1 + 1 + 2 + 4 + 4 + 4 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub m: u8,
    pub g: u16,
    pub n: u32,
    pub k: u32,
    pub payload_len: u32,
    pub seed: u64,
}

impl Header {
    pub fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(self.m);
        out.extend_from_slice(&self.g.to_le_bytes());
        out.extend_from_slice(&self.n.to_le_bytes());
        out.extend_from_slice(&self.k.to_le_bytes());
        out.extend_from_slice(&self.payload_len.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
    }

    pub fn read(bytes: &[u8]) -> Result<Header, Error> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::MalformedStream(format!(
                "header truncated: {} of {HEADER_LEN} bytes",
                bytes.len()
            )));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::MalformedStream("bad magic".into()));
        }
        if bytes[4] != VERSION {
            return Err(Error::MalformedStream(format!("unsupported version {}", bytes[4])));
        }
        let u16_at = |i: usize| u16::from_le_bytes(bytes[i..i + 2].try_into().unwrap());
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        Ok(Header {
            m: bytes[5],
            g: u16_at(6),
            n: u32_at(8),
            k: u32_at(12),
            payload_len: u32_at(16),
            seed: u64::from_le_bytes(bytes[20..28].try_into().unwrap()),
        })
    }
}

pub fn write_record(out: &mut Vec<u8>, packet: &CodedPacket, field: &Field) {
    let bytes = packet.to_bytes(field);
    out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(&bytes);
}

/// Iterates the packet records after the header.
pub struct Records<'a> {
    data: &'a [u8],
    pos: usize,
    field: Field,
    g: usize,
    payload_len: usize,
}

impl<'a> Records<'a> {
    pub fn new(data: &'a [u8], field: Field, g: usize, payload_len: usize) -> Self {
        Records {
            data,
            pos: HEADER_LEN,
            field,
            g,
            payload_len,
        }
    }
}

impl Iterator for Records<'_> {
    type Item = Result<CodedPacket, Error>;

    fn next(&mut self) -> Option<Self::Item> {
        let rest = &self.data[self.pos..];
        if rest.is_empty() {
            return None;
        }
        let len = match rest.get(..4) {
            Some(b) => u32::from_le_bytes(b.try_into().unwrap()) as usize,
            None => usize::MAX,
        };
        if len == usize::MAX || rest.len() - 4 < len {
            let err = Error::MalformedStream(format!("record truncated at byte {}", self.pos));
            self.pos = self.data.len();
            return Some(Err(err));
        }
        let packet = CodedPacket::from_bytes(&self.field, self.g, self.payload_len, &rest[4..4 + len]);
        self.pos += 4 + len;
        Some(packet)
    }
}
