use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

/// Latency applied to each simulated request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LatencyModel {
    #[default]
    None,
    Fixed {
        ms: u64,
    },
    Uniform {
        min_ms: u64,
        max_ms: u64,
    },
}

/// Deterministic fault injection for the simulated store.
///
/// All sampling is driven by a single seeded RNG consumed in request-arrival
/// order, so the same seed and the same request sequence reproduce the same
/// outcomes. Key-targeted faults model the read side: `denied_keys` and
/// `intermittent_fail_counts` match the *source* key of head, part-copy and
/// direct-copy requests. Rate faults and latency apply to every transfer-path
/// request; administrative puts/gets used to build and verify datasets are
/// never faulted.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct FaultPlan {
    /// Probability in [0, 1] that a transfer-path request fails with an
    /// intermittent error.
    #[serde(default)]
    pub intermittent_error_rate: f64,
    /// Forced consecutive intermittent failures per source key, consumed
    /// before any rate-based sampling.
    #[serde(default)]
    pub intermittent_fail_counts: BTreeMap<String, u32>,
    /// Source keys that always fail with a permission error.
    #[serde(default)]
    pub denied_keys: BTreeSet<String>,
    #[serde(default)]
    pub per_request_latency: LatencyModel,
    #[serde(default)]
    pub seed: u64,
}

impl FaultPlan {
    pub fn with_latency(latency: LatencyModel, seed: u64) -> Self {
        FaultPlan {
            per_request_latency: latency,
            seed,
            ..FaultPlan::default()
        }
    }
}

/// What the fault engine decided for one request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FaultOutcome {
    Proceed,
    Intermittent,
    Denied { key: String },
}

#[derive(Debug, Clone)]
pub struct FaultDecision {
    pub latency: Option<Duration>,
    pub outcome: FaultOutcome,
}

/// Mutable sampling state behind a `FaultPlan`.
#[derive(Debug)]
pub struct FaultEngine {
    plan: FaultPlan,
    rng: ChaCha20Rng,
    remaining_fail_counts: BTreeMap<String, u32>,
}

impl FaultEngine {
    pub fn new(plan: FaultPlan) -> Self {
        let rng = ChaCha20Rng::seed_from_u64(plan.seed);
        let remaining_fail_counts = plan.intermittent_fail_counts.clone();
        FaultEngine {
            plan,
            rng,
            remaining_fail_counts,
        }
    }

    /// Samples latency and outcome for one request. `source_key` is the key
    /// being read, when the request reads one; key-targeted faults only
    /// apply to those requests.
    pub fn decide(&mut self, source_key: Option<&str>) -> FaultDecision {
        let latency = match self.plan.per_request_latency {
            LatencyModel::None => None,
            LatencyModel::Fixed { ms } => Some(Duration::from_millis(ms)),
            LatencyModel::Uniform { min_ms, max_ms } => {
                let (lo, hi) = (min_ms.min(max_ms), min_ms.max(max_ms));
                Some(Duration::from_millis(self.rng.gen_range(lo..=hi)))
            }
        };

        if let Some(key) = source_key {
            if self.plan.denied_keys.contains(key) {
                return FaultDecision {
                    latency,
                    outcome: FaultOutcome::Denied {
                        key: key.to_string(),
                    },
                };
            }
            if let Some(remaining) = self.remaining_fail_counts.get_mut(key) {
                if *remaining > 0 {
                    *remaining -= 1;
                    return FaultDecision {
                        latency,
                        outcome: FaultOutcome::Intermittent,
                    };
                }
            }
        }

        if self.plan.intermittent_error_rate > 0.0
            && self.rng.gen::<f64>() < self.plan.intermittent_error_rate
        {
            return FaultDecision {
                latency,
                outcome: FaultOutcome::Intermittent,
            };
        }

        FaultDecision {
            latency,
            outcome: FaultOutcome::Proceed,
        }
    }
}
