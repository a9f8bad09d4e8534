//! Stratified train/validation/test splitting for cross-validation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Error;
use crate::Result;

/// Percentages plus the fold/seed that make a split reproducible.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitSpec {
    pub train_pct: u32,
    pub val_pct: u32,
    pub test_pct: u32,
    pub fold: usize,
    pub seed: u64,
    pub stratified: bool,
}

impl SplitSpec {
    pub fn new(train_pct: u32, val_pct: u32, test_pct: u32) -> Result<Self> {
        if train_pct + val_pct + test_pct != 100 {
            return Err(Error::contract(format!(
                "split percentages must sum to 100, got {train_pct}/{val_pct}/{test_pct}"
            )));
        }
        if train_pct == 0 || test_pct == 0 {
            return Err(Error::contract("train and test fractions must be positive"));
        }
        Ok(SplitSpec {
            train_pct,
            val_pct,
            test_pct,
            fold: 0,
            seed: 0,
            stratified: true,
        })
    }

    pub fn with_fold(mut self, fold: usize) -> Self {
        self.fold = fold;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Parse `"60/20/20"` into a [`SplitSpec`].
pub fn parse_split(text: &str) -> Result<SplitSpec> {
    let parts: Vec<&str> = text.split('/').collect();
    if parts.len() != 3 {
        return Err(Error::contract(format!(
            "split `{text}` is not of the form A/B/C"
        )));
    }
    let mut nums = [0u32; 3];
    for (slot, part) in nums.iter_mut().zip(&parts) {
        *slot = part
            .trim()
            .parse()
            .map_err(|_| Error::contract(format!("split component `{part}` is not a number")))?;
    }
    SplitSpec::new(nums[0], nums[1], nums[2])
}

/// Index lists of one fold. The three lists partition `0..n`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitIndices {
    /// Write as three text files (`train.idx`, `val.idx`, `test.idx`), one
    /// index per line, for the audit log.
    pub fn write_to(&self, dir: &std::path::Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, list) in [
            ("train.idx", &self.train),
            ("val.idx", &self.val),
            ("test.idx", &self.test),
        ] {
            let mut text = String::new();
            for &i in list {
                text.push_str(&format!("{i}\n"));
            }
            std::fs::write(dir.join(name), text)?;
        }
        Ok(())
    }

    pub fn read_from(dir: &std::path::Path) -> Result<Self> {
        let read = |name: &str| -> Result<Vec<usize>> {
            let text = std::fs::read_to_string(dir.join(name))?;
            text.lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| {
                    l.trim()
                        .parse()
                        .map_err(|_| Error::Data(format!("bad index `{l}` in {name}")))
                })
                .collect()
        };
        Ok(SplitIndices {
            train: read("train.idx")?,
            val: read("val.idx")?,
            test: read("test.idx")?,
        })
    }
}

/// Largest-remainder allocation of `n` items to the three buckets.
fn allocate(n: usize, spec: &SplitSpec) -> [usize; 3] {
    let pcts = [
        spec.train_pct as f64,
        spec.val_pct as f64,
        spec.test_pct as f64,
    ];
    let mut base = [0usize; 3];
    let mut frac = [0f64; 3];
    let mut assigned = 0;
    for i in 0..3 {
        let exact = n as f64 * pcts[i] / 100.0;
        base[i] = exact.floor() as usize;
        frac[i] = exact - base[i] as f64;
        assigned += base[i];
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| frac[b].partial_cmp(&frac[a]).unwrap().then(a.cmp(&b)));
    for &bucket in order.iter().take(n - assigned) {
        base[bucket] += 1;
    }
    base
}

/// Per-fold stratified random split. Each class's indices are shuffled with
/// an rng seeded by `(seed, fold, class)` and allocated at the spec's
/// percentages, so class proportions hold within one image per class and
/// different folds draw different splits.
pub fn kfold_split(labels: &[usize], num_classes: usize, spec: &SplitSpec) -> Result<SplitIndices> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &label) in labels.iter().enumerate() {
        if label >= num_classes {
            return Err(Error::contract(format!(
                "label {label} out of range for {num_classes}"
            )));
        }
        by_class[label].push(i);
    }

    let mut out = SplitIndices {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    if spec.stratified {
        for (class, mut indices) in by_class.into_iter().enumerate() {
            if indices.len() < 5 {
                return Err(Error::Split(format!(
                    "class {class} has only {} images; stratified splitting needs at least 5",
                    indices.len()
                )));
            }
            let mut rng =
                ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, spec.fold as u64, class as u64));
            indices.shuffle(&mut rng);
            let [n_train, n_val, _] = allocate(indices.len(), spec);
            out.train.extend(&indices[..n_train]);
            out.val.extend(&indices[n_train..n_train + n_val]);
            out.test.extend(&indices[n_train + n_val..]);
        }
    } else {
        let mut indices: Vec<usize> = (0..labels.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, spec.fold as u64, u64::MAX));
        indices.shuffle(&mut rng);
        let [n_train, n_val, _] = allocate(indices.len(), spec);
        out.train.extend(&indices[..n_train]);
        out.val.extend(&indices[n_train..n_train + n_val]);
        out.test.extend(&indices[n_train + n_val..]);
    }
    out.train.sort_unstable();
    out.val.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

/// SplitMix64-style avalanche over the three seed components.
pub(crate) fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z =
        seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
