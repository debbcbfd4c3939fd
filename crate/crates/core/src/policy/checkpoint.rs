//! Policy checkpoint files.
//!
//! A checkpoint is a single JSON object:
//!
//! ```text
//! {"format":"scaffold-policy","version":1,"vocab_size":V,"max_length":L,
//!  "contexts":C,"logits":[...C*(V+1)*V numbers...]}
//! ```
//!
//! Rows are ordered by context, then by previous token `0..V`, then the
//! start-marker row; each row holds `V` logits. Floats are written in
//! shortest round-trip form, so save/load is exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::PolicyParams;

pub const FORMAT: &str = "scaffold-policy";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    vocab_size: usize,
    max_length: usize,
    contexts: usize,
    logits: Vec<f64>,
}

pub fn to_json(params: &PolicyParams) -> Result<String> {
    Ok(serde_json::to_string(&CheckpointFile {
        format: FORMAT.into(),
        version: VERSION,
        vocab_size: params.vocab_size(),
        max_length: params.max_length(),
        contexts: params.contexts(),
        logits: params.raw().to_vec(),
    })?)
}

pub fn from_json(text: &str) -> Result<PolicyParams> {
    let file: CheckpointFile = serde_json::from_str(text)
        .map_err(|e| Error::BadCheckpoint(e.to_string()))?;
    if file.format != FORMAT {
        return Err(Error::BadCheckpoint(format!(
            "unknown format `{}`",
            file.format
        )));
    }
    if file.version != VERSION {
        return Err(Error::BadCheckpoint(format!(
            "unsupported version {}",
            file.version
        )));
    }
    PolicyParams::from_raw(file.contexts, file.vocab_size, file.max_length, file.logits)
}

pub fn save(params: &PolicyParams, path: &Path) -> Result<()> {
    fs::write(path, to_json(params)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<PolicyParams> {
    from_json(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    proptest! {
        #[test]
        fn save_load_is_exact(seed in any::<u64>(), ctx in 1usize..4, vocab in 2usize..10) {
            let p = PolicyParams::random(ctx, vocab, 8, 3.0, &mut ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(from_json(&to_json(&p).unwrap()).unwrap(), p);
        }
    }

    #[test]
    fn rejects_foreign_or_malformed_files() {
        let p = PolicyParams::zeros(1, 4, 4);
        let good = to_json(&p).unwrap();
        assert!(from_json(&good.replace(FORMAT, "other")).is_err());
        assert!(from_json(&good.replace("\"version\":1", "\"version\":9")).is_err());
        assert!(from_json(&good.replace("\"contexts\":1", "\"contexts\":2")).is_err());
        assert!(from_json("not json").is_err());
    }
}
