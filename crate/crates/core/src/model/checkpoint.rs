//! Binary checkpoint format:
//!
//! ```text
//! b"TDCK1\n"
//! u32 num_users | u32 num_items | u32 dim          (little endian)
//! f32 user_table[num_users * dim]                  (row major, little endian)
//! f32 item_table[num_items * dim]
//! u64 FNV-1a of every preceding byte               (little endian)
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numkernel::Matrix;
use crate::seed::fnv1a64;

use super::EmbeddingModel;

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"TDCK1\n";

const HEADER_LEN: usize = 6 + 3 * 4;

/// Checksum stored in the trailer of a checkpoint.
pub fn checksum_of(bytes: &[u8]) -> Option<u64> {
    let n = bytes.len().checked_sub(8)?;
    Some(u64::from_le_bytes(bytes[n..].try_into().ok()?))
}

impl EmbeddingModel {
    pub fn to_checkpoint_bytes(&self) -> Result<Vec<u8>> {
        let to_u32 = |v: usize, what: &str| {
            u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{what} {v} does not fit in u32")))
        };
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * (self.users.data().len() + self.items.data().len()) + 8);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&to_u32(self.num_users(), "num_users")?.to_le_bytes());
        out.extend_from_slice(&to_u32(self.num_items(), "num_items")?.to_le_bytes());
        out.extend_from_slice(&to_u32(self.dim(), "dim")?.to_le_bytes());
        for &v in self.users.data().iter().chain(self.items.data()) {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        let sum = fnv1a64(&out);
        out.extend_from_slice(&sum.to_le_bytes());
        Ok(out)
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN + 8 || &bytes[..6] != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("missing TDCK1 header".into()));
        }
        let payload = &bytes[..bytes.len() - 8];
        let stored = checksum_of(bytes).expect("length checked above");
        if fnv1a64(payload) != stored {
            return Err(Error::Checkpoint("checksum mismatch".into()));
        }
        let read_u32 = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
        let (num_users, num_items, dim) = (read_u32(6), read_u32(10), read_u32(14));
        let floats = (num_users + num_items)
            .checked_mul(dim)
            .ok_or_else(|| Error::Checkpoint("header sizes overflow".into()))?;
        if payload.len() != HEADER_LEN + 4 * floats {
            return Err(Error::Checkpoint(format!(
                "payload holds {} bytes, header implies {}",
                payload.len() - HEADER_LEN,
                4 * floats
            )));
        }
        let values: Vec<f64> = payload[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let split = num_users * dim;
        let users = Matrix::new(num_users, dim, values[..split].to_vec())?;
        let items = Matrix::new(num_items, dim, values[split..].to_vec())?;
        let model = EmbeddingModel::from_tables(users, items).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if !model.is_finite() {
            return Err(Error::Checkpoint("non-finite embedding values".into()));
        }
        Ok(model)
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<u64> {
        let bytes = self.to_checkpoint_bytes()?;
        fs::write(path, &bytes)?;
        Ok(checksum_of(&bytes).expect("freshly written trailer"))
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let bytes =
            fs::read(path).map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
        Self::from_checkpoint_bytes(&bytes)
    }
}
