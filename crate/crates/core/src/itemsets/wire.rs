use crate::datagen::Item;
use crate::error::{Error, Result};
use crate::gridsim::Payload;

use super::Itemset;

const HEADER: usize = 4 + 4;

/// Itemsets with support counts sent by one site. Encoded little-endian as
/// a 4-byte site id and 4-byte entry count, then per entry a 2-byte length,
/// 4 bytes per item and an 8-byte support (0 in pure requests).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ItemsetMessage {
    pub site: u32,
    pub entries: Vec<(Itemset, u64)>,
}

impl ItemsetMessage {
    pub fn new(site: usize, entries: Vec<(Itemset, u64)>) -> Self {
        ItemsetMessage {
            site: site as u32,
            entries,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.wire_len() as usize);
        out.extend_from_slice(&self.site.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (set, support) in &self.entries {
            out.extend_from_slice(&(set.len() as u16).to_le_bytes());
            for &i in set.items() {
                out.extend_from_slice(&i.to_le_bytes());
            }
            out.extend_from_slice(&support.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let site = u32::from_le_bytes(r.take()?);
        let n = u32::from_le_bytes(r.take()?);
        let mut entries = Vec::new();
        for _ in 0..n {
            let len = u16::from_le_bytes(r.take()?);
            let items = (0..len)
                .map(|_| r.take().map(Item::from_le_bytes))
                .collect::<Result<Vec<_>>>()?;
            let support = u64::from_le_bytes(r.take()?);
            entries.push((Itemset::new(items)?, support));
        }
        if r.pos != bytes.len() {
            return Err(Error::validation("trailing bytes after itemset message"));
        }
        Ok(ItemsetMessage { site, entries })
    }
}

impl Payload for ItemsetMessage {
    fn wire_len(&self) -> u64 {
        let body: usize = self.entries.iter().map(|(s, _)| 2 + 4 * s.len() + 8).sum();
        (HEADER + body) as u64
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let chunk = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::validation("truncated itemset message"))?;
        self.pos = end;
        Ok(chunk.try_into().expect("slice has length N"))
    }
}
