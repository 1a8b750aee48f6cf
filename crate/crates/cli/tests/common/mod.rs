//! Synthetic dataset used by the CLI and acceptance tests: labels are
//! determined by membership in two disjoint balls in feature space (plus
//! label noise), and a slice of claims is placed far from both balls so a
//! well-behaved market must abstain on them.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use repmarket::{ClaimRecord, FeatureSchema, Label};

pub struct SyntheticSpec {
    pub n: usize,
    pub dimension: usize,
    /// Fraction of claims placed far from both label balls.
    pub far_fraction: f64,
    /// Probability that an in-ball claim's label is flipped.
    pub label_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n: 192,
            dimension: 41,
            far_fraction: 0.25,
            label_noise: 0.05,
            seed: 2024,
        }
    }
}

/// Raw feature cells span [-2, 2]; the pipeline's min-max normalization has
/// to undo this affine stretch.
fn to_raw(z: f64) -> f64 {
    z * 4.0 - 2.0
}

pub fn synthetic_claims(spec: &SyntheticSpec) -> Vec<ClaimRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.dimension;
    let center_yes = vec![0.3; 41][..d].to_vec();
    let center_no = vec![0.7; 41][..d].to_vec();
    let n_far = (spec.n as f64 * spec.far_fraction).round() as usize;
    let n_ball = spec.n - n_far;

    let mut records = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let (z, label) = if i < n_ball {
            // Alternate between the two balls; tight Gaussian spread.
            let (center, ball_label) = if i % 2 == 0 {
                (&center_yes, Label::Replicable)
            } else {
                (&center_no, Label::NotReplicable)
            };
            // Spread wide enough that evolved purchase regions have room
            // to grow into the cluster without ever reaching the opposite
            // ball (centers sit 0.4 * sqrt(d) apart).
            let z: Vec<f64> = center
                .iter()
                .map(|c| (c + gaussian(&mut rng) * 0.08).clamp(0.0, 1.0))
                .collect();
            let label = if rng.gen::<f64>() < spec.label_noise {
                flip(ball_label)
            } else {
                ball_label
            };
            (z, label)
        } else {
            // Background: uniform draws rejected near either ball center.
            let z = loop {
                let z: Vec<f64> = (0..d).map(|_| rng.gen::<f64>()).collect();
                let near = |center: &[f64]| {
                    z.iter()
                        .zip(center)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt()
                        < 1.0
                };
                if !near(&center_yes) && !near(&center_no) {
                    break z;
                }
            };
            let label = if rng.gen::<bool>() {
                Label::Replicable
            } else {
                Label::NotReplicable
            };
            (z, label)
        };

        // Sprinkle missing cells to exercise median imputation.
        let raw_features: Vec<Option<f64>> = z
            .iter()
            .map(|v| {
                if rng.gen::<f64>() < 0.02 {
                    None
                } else {
                    Some(to_raw(*v))
                }
            })
            .collect();
        records.push(ClaimRecord {
            id: format!("paper-{i:03}"),
            raw_features,
            label: Some(label),
        });
    }
    records
}

fn flip(label: Label) -> Label {
    match label {
        Label::Replicable => Label::NotReplicable,
        Label::NotReplicable => Label::Replicable,
    }
}

/// Box-Muller; good enough for fixture generation.
fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn write_csv(path: &Path, schema: &FeatureSchema, records: &[ClaimRecord]) {
    let mut text = String::from("id");
    for name in schema.names() {
        write!(text, ",{name}").unwrap();
    }
    text.push_str(",label\n");
    for record in records {
        write!(text, "{}", record.id).unwrap();
        for cell in &record.raw_features {
            match cell {
                Some(v) => write!(text, ",{v}").unwrap(),
                None => text.push(','),
            }
        }
        match record.label {
            Some(label) => writeln!(text, ",{label}").unwrap(),
            None => text.push_str(",\n"),
        }
    }
    std::fs::write(path, text).unwrap();
}
