//! Small generated corpora with known structure, used by tests, the
//! acceptance suite and `logstamp eval --synthetic`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Dataset, TokenizerConfig};
use crate::labeler::{LabeledSentence, WordLabel};

fn interface_id(rng: &mut ChaCha8Rng) -> String {
    format!("te-{}/{}/{}", rng.gen_range(0..8), rng.gen_range(0..4), rng.gen_range(0..100))
}

fn block_id(rng: &mut ChaCha8Rng) -> String {
    format!("blk_{}", rng.gen_range(-9_000_000_000_000_000i64..9_000_000_000_000_000))
}

fn ip(rng: &mut ChaCha8Rng) -> String {
    format!(
        "/10.{}.{}.{}:{}",
        rng.gen_range(0..256),
        rng.gen_range(0..256),
        rng.gen_range(0..256),
        rng.gen_range(1024..65536)
    )
}

/// `n` lines alternating at random between two templates:
///
/// * `E1`: `Interface <iface> change state to down`
/// * `E2`: `Receiving block <blk> src <ip> dest <ip>`
pub fn two_template_dataset(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lines: Vec<(String, Option<String>)> = (0..n)
        .map(|_| {
            if rng.gen_bool(0.5) {
                (format!("Interface {} change state to down", interface_id(&mut rng)), Some("E1".into()))
            } else {
                let line = format!("Receiving block {} src {} dest {}", block_id(&mut rng), ip(&mut rng), ip(&mut rng));
                (line, Some("E2".into()))
            }
        })
        .collect();
    Dataset::from_lines("synthetic-2", lines, &TokenizerConfig::default())
}

/// `n` identical-template lines with one variable slot.
pub fn one_template_dataset(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lines: Vec<(String, Option<String>)> = (0..n)
        .map(|_| (format!("Session {} opened for user root", rng.gen_range(0..1_000_000)), Some("E1".into())))
        .collect();
    Dataset::from_lines("synthetic-1", lines, &TokenizerConfig::default())
}

/// A multi-template corpus resembling service logs: eight templates with
/// ids, counters, addresses and paths as variables.
pub fn service_dataset(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lines: Vec<(String, Option<String>)> = (0..n)
        .map(|_| {
            let which = rng.gen_range(0..8);
            let line = match which {
                0 => format!("Receiving block {} src {} dest {}", block_id(&mut rng), ip(&mut rng), ip(&mut rng)),
                1 => format!("PacketResponder {} for block {} terminating", rng.gen_range(0..3), block_id(&mut rng)),
                2 => format!(
                    "BLOCK* NameSystem.addStoredBlock: blockMap updated: {} is added to {} size {}",
                    ip(&mut rng),
                    block_id(&mut rng),
                    rng.gen_range(1000..70_000_000)
                ),
                3 => format!("Verification succeeded for {}", block_id(&mut rng)),
                4 => format!("Interface {} change state to down", interface_id(&mut rng)),
                5 => format!("Accepted socket connection from {}", ip(&mut rng)),
                6 => format!(
                    "Deleting block {} file /mnt/hadoop/dfs/data/current/subdir{}/{}",
                    block_id(&mut rng),
                    rng.gen_range(0..64),
                    block_id(&mut rng)
                ),
                _ => format!("Closed socket connection for client {} which had sessionid 0x{:x}", ip(&mut rng), rng.gen::<u64>()),
            };
            (line, Some(format!("E{}", which + 1)))
        })
        .collect();
    Dataset::from_lines("synthetic-service", lines, &TokenizerConfig::default())
}

/// Sentences whose label at position `i >= lag` is TEMPLATE iff the token at
/// `i - lag` is one of the first half of `alphabet`; earlier positions are
/// TEMPLATE. Tokens are drawn uniformly, so a model seeing only positions
/// `i-1..=i+1` cannot beat chance on the lagged positions.
pub fn long_range_sentences(count: usize, len: usize, lag: usize, seed: u64) -> Vec<LabeledSentence> {
    let alphabet = ["ka", "ko", "ku", "ke"];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|id| {
            let tokens: Vec<String> =
                (0..len).map(|_| alphabet.choose(&mut rng).unwrap().to_string()).collect();
            let labels = (0..len)
                .map(|i| {
                    if i < lag || alphabet[..2].contains(&tokens[i - lag].as_str()) {
                        WordLabel::Template
                    } else {
                        WordLabel::Variable
                    }
                })
                .collect();
            LabeledSentence { record_id: id, tokens, labels, cluster_id: 0 }
        })
        .collect()
}
