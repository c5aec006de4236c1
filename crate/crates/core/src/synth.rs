//! Synthetic meal-log generation for desk-scale runs.
//!
//! Generators are deterministic given (config, seed) and carry the
//! ground-truth mean response alongside each record so tests can score
//! fitted curves against the noiseless truth.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{MealRecord, MealType};
use crate::error::IngestError;

/// Sampling law for one covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Law {
    pub lo: f64,
    pub hi: f64,
    #[serde(default)]
    pub shape: Shape,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    #[default]
    Uniform,
    /// Triangular with mode at the given fraction of the range.
    Peaked { mode: f64 },
}

impl Law {
    pub fn uniform(lo: f64, hi: f64) -> Law {
        Law {
            lo,
            hi,
            shape: Shape::Uniform,
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        let u: f64 = rng.random();
        match self.shape {
            Shape::Uniform => self.lo + u * (self.hi - self.lo),
            Shape::Peaked { mode } => {
                let c = mode.clamp(0.0, 1.0);
                // inverse-CDF sample of a triangular distribution on [0, 1]
                let t = if u < c {
                    (u * c).sqrt()
                } else {
                    1.0 - ((1.0 - u) * (1.0 - c)).sqrt()
                };
                self.lo + t * (self.hi - self.lo)
            }
        }
    }

    fn validate(&self, name: &str) -> Result<(), IngestError> {
        if !self.lo.is_finite() || !self.hi.is_finite() || self.hi < self.lo {
            return Err(IngestError::BadSynthConfig(format!(
                "law for {name} must have finite lo <= hi"
            )));
        }
        Ok(())
    }
}

/// Ground-truth mean BG impact as a function of the meal covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TruthFn {
    /// impact = intercept + slope * carbs
    Linear { intercept: f64, slope: f64 },
    /// impact = offset + coeff * (carbs - center)^2
    Quadratic { center: f64, coeff: f64, offset: f64 },
    /// impact = start + slope * min(fiber, knee); flat past the knee.
    PiecewiseFlat { start: f64, slope: f64, knee: f64 },
}

/// Snap a value to the 2^-26 dyadic grid. At meal-log magnitudes this makes
/// sums with BG readings exactly representable, so noiseless records
/// reproduce the truth value exactly in post - pre.
fn quantize(v: f64) -> f64 {
    const GRID: f64 = 67_108_864.0; // 2^26
    (v * GRID).round() / GRID
}

impl TruthFn {
    /// Mean impact at the given covariates, on the generator's value grid.
    pub fn eval(&self, carbs: f64, fiber: f64) -> f64 {
        let raw = match self {
            TruthFn::Linear { intercept, slope } => intercept + slope * carbs,
            TruthFn::Quadratic { center, coeff, offset } => {
                offset + coeff * (carbs - center) * (carbs - center)
            }
            TruthFn::PiecewiseFlat { start, slope, knee } => start + slope * fiber.min(*knee),
        };
        quantize(raw)
    }
}

/// Forced out-of-range fiber entries, mirroring mistyped nutrient
/// assessments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierSpec {
    pub fiber_g: f64,
    pub count: usize,
}

/// Configuration of one synthetic user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n: usize,
    #[serde(default = "default_user_id")]
    pub user_id: String,
    pub carbs: Law,
    pub fat: Law,
    pub protein: Law,
    pub fiber: Law,
    pub pre_bg: Law,
    pub truth: TruthFn,
    pub noise_sd: f64,
    #[serde(default)]
    pub outliers: Option<OutlierSpec>,
}

fn default_user_id() -> String {
    "synth-1".to_string()
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n: 88,
            user_id: default_user_id(),
            carbs: Law::uniform(0.0, 100.0),
            fat: Law::uniform(0.0, 60.0),
            protein: Law::uniform(0.0, 60.0),
            fiber: Law::uniform(0.0, 15.0),
            pre_bg: Law::uniform(90.0, 180.0),
            truth: TruthFn::Quadratic {
                center: 50.0,
                coeff: 0.018,
                offset: -15.0,
            },
            noise_sd: 10.0,
            outliers: None,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), IngestError> {
        if self.n < 1 {
            return Err(IngestError::BadSynthConfig("n must be >= 1".into()));
        }
        if !self.noise_sd.is_finite() || self.noise_sd < 0.0 {
            return Err(IngestError::BadSynthConfig("noise_sd must be >= 0".into()));
        }
        self.carbs.validate("carbs")?;
        self.fat.validate("fat")?;
        self.protein.validate("protein")?;
        self.fiber.validate("fiber")?;
        self.pre_bg.validate("pre_bg")?;
        for (name, law) in [
            ("carbs", &self.carbs),
            ("fat", &self.fat),
            ("protein", &self.protein),
            ("fiber", &self.fiber),
        ] {
            if law.lo < 0.0 {
                return Err(IngestError::BadSynthConfig(format!(
                    "{name} law must be non-negative"
                )));
            }
        }
        if self.pre_bg.lo <= 0.0 {
            return Err(IngestError::BadSynthConfig("pre_bg law must be positive".into()));
        }
        if let Some(o) = &self.outliers {
            if o.count > self.n {
                return Err(IngestError::BadSynthConfig(
                    "outlier count exceeds record count".into(),
                ));
            }
            if !o.fiber_g.is_finite() || o.fiber_g < 0.0 {
                return Err(IngestError::BadSynthConfig("outlier fiber must be >= 0".into()));
            }
        }
        Ok(())
    }
}

/// Generated records plus the noiseless ground-truth mean for each.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub records: Vec<MealRecord>,
    pub truth: Vec<f64>,
}

/// Generate synthetic meal records. Deterministic given (config, seed).
pub fn generate_synthetic(config: &SynthConfig, seed: u64) -> Result<SynthData, IngestError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = if config.noise_sd > 0.0 {
        Some(Normal::new(0.0, config.noise_sd).expect("validated sd"))
    } else {
        None
    };

    let mut records = Vec::with_capacity(config.n);
    let mut truth = Vec::with_capacity(config.n);
    for i in 0..config.n {
        let carbs = config.carbs.sample(&mut rng);
        let fat = config.fat.sample(&mut rng);
        let protein = config.protein.sample(&mut rng);
        let mut fiber = config.fiber.sample(&mut rng);
        let pre_bg = quantize(config.pre_bg.sample(&mut rng));

        // The last `count` records carry the forced fiber value.
        if let Some(o) = &config.outliers {
            if i >= config.n - o.count {
                fiber = o.fiber_g;
            }
        }

        let mean = config.truth.eval(carbs, fiber);
        let mut post_bg = pre_bg + mean;
        if let Some(dist) = &noise {
            // redraw until the post-meal reading stays positive
            loop {
                post_bg = pre_bg + mean + dist.sample(&mut rng);
                if post_bg > 0.0 {
                    break;
                }
            }
        }
        if post_bg <= 0.0 {
            return Err(IngestError::BadSynthConfig(format!(
                "truth drives post-meal BG non-positive ({post_bg}) at record {i}"
            )));
        }

        records.push(MealRecord {
            user_id: config.user_id.clone(),
            meal_type: MealType::ALL[i % 4],
            carbs: Some(carbs),
            fat: Some(fat),
            protein: Some(protein),
            fiber: Some(fiber),
            pre_bg,
            post_bg,
        });
        truth.push(mean);
    }
    Ok(SynthData { records, truth })
}
