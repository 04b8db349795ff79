//! Synthetic multi-task group-sparse regression data and its on-disk
//! format.

use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::lowerlevel::TaskData;
use crate::penalty::GroupAssignment;

pub const BUNDLE_SCHEMA_VERSION: u32 = 1;

/// Dirichlet concentration for group sizes; small values give very uneven
/// partitions.
const SIZE_CONCENTRATION: f64 = 0.5;

/// Independent random substreams derived from one master seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Partition = 1,
    Task = 2,
    ThetaInit = 3,
    Minibatch = 4,
    Instance = 5,
    Verify = 6,
}

/// ChaCha20 generator on the `(purpose, index)` substream of `seed`.
pub fn substream(seed: u64, purpose: Stream, index: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 40) | (index & ((1 << 40) - 1)));
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub d: usize,
    pub groups: usize,
    pub tasks: usize,
    pub n: usize,
    pub noise_variance: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            d: 100,
            groups: 10,
            tasks: 50,
            n: 50,
            noise_variance: 0.1,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.groups == 0 || self.groups > self.d {
            return Err(Error::Config(format!(
                "need 1 <= groups <= d, got groups={} d={}",
                self.groups, self.d
            )));
        }
        if self.n == 0 || self.tasks == 0 {
            return Err(Error::Config("n and tasks must be >= 1".into()));
        }
        if !(self.noise_variance > 0.0) || !self.noise_variance.is_finite() {
            return Err(Error::Config("noise_variance must be positive".into()));
        }
        Ok(())
    }
}

/// One task with its three splits and the regressor that generated them.
#[derive(Clone, Debug, PartialEq)]
pub struct Task {
    pub train: TaskData,
    pub validation: TaskData,
    pub test: TaskData,
    pub w_star: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskBundle {
    pub cfg: GenConfig,
    /// Oracle group of every feature.
    pub labels: Vec<usize>,
    pub tasks: Vec<Task>,
}

impl TaskBundle {
    pub fn d(&self) -> usize {
        self.cfg.d
    }

    pub fn groups(&self) -> usize {
        self.cfg.groups
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn oracle_groups(&self) -> Vec<Vec<usize>> {
        let mut g = vec![Vec::new(); self.groups()];
        for (j, &l) in self.labels.iter().enumerate() {
            g[l].push(j);
        }
        g
    }

    pub fn oracle_assignment(&self) -> GroupAssignment {
        GroupAssignment::from_labels(&self.labels, self.groups()).unwrap()
    }
}

/// Splits `0..d` into `groups` nonempty contiguous blocks whose sizes follow
/// a symmetric Dirichlet(0.5) draw. Every group gets one feature up front;
/// the other `d − groups` are shared out by floor of the Dirichlet weights
/// and the rounding remainder goes to the group with the largest weight.
pub fn random_partition<R: Rng>(d: usize, groups: usize, rng: &mut R) -> Vec<Vec<usize>> {
    assert!(groups >= 1 && groups <= d, "need 1 <= groups <= d");
    let gamma = Gamma::new(SIZE_CONCENTRATION, 1.0).unwrap();
    let mut weights: Vec<f64> = (0..groups).map(|_| gamma.sample(rng)).collect();
    let total: f64 = weights.iter().sum();
    if total > 0.0 {
        weights.iter_mut().for_each(|w| *w /= total);
    } else {
        weights.iter_mut().for_each(|w| *w = 1.0 / groups as f64);
    }
    let spare = d - groups;
    let mut sizes: Vec<usize> = weights
        .iter()
        .map(|w| 1 + (w * spare as f64).floor() as usize)
        .collect();
    let assigned: usize = sizes.iter().sum();
    let largest = weights
        .iter()
        .enumerate()
        .fold(0, |best, (i, w)| if *w > weights[best] { i } else { best });
    sizes[largest] += d - assigned;

    let mut out = Vec::with_capacity(groups);
    let mut start = 0;
    for s in sizes {
        out.push((start..start + s).collect());
        start += s;
    }
    out
}

pub fn partition_labels(groups: &[Vec<usize>], d: usize) -> Vec<usize> {
    let mut labels = vec![0; d];
    for (l, g) in groups.iter().enumerate() {
        for &j in g {
            labels[j] = l;
        }
    }
    labels
}

fn normal_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> DenseMatrix {
    let data = (0..rows * cols)
        .map(|_| rng.sample(StandardNormal))
        .collect();
    DenseMatrix::from_vec(rows, cols, data).unwrap()
}

fn make_split<R: Rng>(rng: &mut R, cfg: &GenConfig, w_star: &[f64]) -> TaskData {
    let mut x = normal_matrix(rng, cfg.n, cfg.d);
    x.normalize_columns();
    let sd = cfg.noise_variance.sqrt();
    let y = x
        .matvec(w_star)
        .into_iter()
        .map(|m| m + sd * rng.sample::<f64, _>(StandardNormal))
        .collect();
    TaskData::new(x, y).unwrap()
}

/// Draws a bundle. Each task's regressor is standard normal on the union
/// of one group (probability ½) or two distinct groups and zero elsewhere;
/// the three splits share the regressor but get fresh designs and noise.
pub fn generate(cfg: &GenConfig) -> Result<TaskBundle> {
    cfg.validate()?;
    let mut prng = substream(cfg.seed, Stream::Partition, 0);
    let partition = random_partition(cfg.d, cfg.groups, &mut prng);
    let labels = partition_labels(&partition, cfg.d);
    let group_ids: Vec<usize> = (0..cfg.groups).collect();

    let tasks = (0..cfg.tasks)
        .map(|t| {
            let mut rng = substream(cfg.seed, Stream::Task, t as u64);
            let k = if cfg.groups >= 2 && rng.random_bool(0.5) {
                2
            } else {
                1
            };
            let chosen: Vec<usize> = group_ids.choose_multiple(&mut rng, k).copied().collect();
            let mut w_star = vec![0.0; cfg.d];
            for &g in &chosen {
                for &j in &partition[g] {
                    w_star[j] = rng.sample(StandardNormal);
                }
            }
            let train = make_split(&mut rng, cfg, &w_star);
            let validation = make_split(&mut rng, cfg, &w_star);
            let test = make_split(&mut rng, cfg, &w_star);
            Task {
                train,
                validation,
                test,
                w_star,
            }
        })
        .collect();

    Ok(TaskBundle {
        cfg: cfg.clone(),
        labels,
        tasks,
    })
}

/// Random task order for one epoch.
pub fn epoch_permutation<R: Rng>(rng: &mut R, len: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(rng);
    idx
}

// ---- persistence ----------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Payload {
    shape: Vec<usize>,
    data: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SplitFile {
    x: Payload,
    y: Payload,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskFile {
    w_star: Payload,
    train: SplitFile,
    validation: SplitFile,
    test: SplitFile,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BundleFile {
    schema_version: u32,
    cfg: GenConfig,
    checksum: u32,
    labels: Vec<usize>,
    tasks: Vec<TaskFile>,
}

fn f64_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

struct Encoder {
    crc: crc32fast::Hasher,
}

impl Encoder {
    fn payload(&mut self, shape: Vec<usize>, values: &[f64]) -> Payload {
        let bytes = f64_bytes(values);
        self.crc.update(&bytes);
        Payload {
            shape,
            data: B64.encode(bytes),
        }
    }

    fn split(&mut self, t: &TaskData) -> SplitFile {
        SplitFile {
            x: self.payload(vec![t.x.rows(), t.x.cols()], t.x.as_slice()),
            y: self.payload(vec![t.y.len()], &t.y),
        }
    }
}

/// Serializes a bundle to the JSON document written by [`save_bundle`].
pub fn bundle_to_bytes(bundle: &TaskBundle) -> Result<Vec<u8>> {
    let mut enc = Encoder {
        crc: crc32fast::Hasher::new(),
    };
    let tasks = bundle
        .tasks
        .iter()
        .map(|t| TaskFile {
            w_star: enc.payload(vec![t.w_star.len()], &t.w_star),
            train: enc.split(&t.train),
            validation: enc.split(&t.validation),
            test: enc.split(&t.test),
        })
        .collect();
    let file = BundleFile {
        schema_version: BUNDLE_SCHEMA_VERSION,
        cfg: bundle.cfg.clone(),
        checksum: enc.crc.finalize(),
        labels: bundle.labels.clone(),
        tasks,
    };
    Ok(serde_json::to_vec_pretty(&file)?)
}

pub fn save_bundle(bundle: &TaskBundle, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = bundle_to_bytes(bundle)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

struct Decoder<'a> {
    crc: crc32fast::Hasher,
    path: &'a Path,
}

impl Decoder<'_> {
    fn values(&mut self, p: &Payload, expected_rank: usize) -> Result<Vec<f64>> {
        let bytes = B64
            .decode(&p.data)
            .map_err(|e| Error::ChecksumMismatch(format!("payload does not decode: {e}")))?;
        self.crc.update(&bytes);
        if p.shape.len() != expected_rank {
            return Err(self.malformed(format!(
                "expected rank {expected_rank}, got shape {:?}",
                p.shape
            )));
        }
        let count: usize = p.shape.iter().product();
        if bytes.len() != 8 * count {
            return Err(Error::ChecksumMismatch(format!(
                "payload of shape {:?} holds {} bytes",
                p.shape,
                bytes.len()
            )));
        }
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn split(&mut self, s: &SplitFile) -> Result<TaskData> {
        let x = self.values(&s.x, 2)?;
        let x = DenseMatrix::from_vec(s.x.shape[0], s.x.shape[1], x)?;
        let y = self.values(&s.y, 1)?;
        TaskData::new(x, y)
    }

    fn malformed(&self, msg: String) -> Error {
        Error::Malformed {
            path: self.path.to_path_buf(),
            msg,
        }
    }
}

/// Parses a bundle document. `path` is only used in error messages.
pub fn bundle_from_bytes(bytes: &[u8], path: &Path) -> Result<TaskBundle> {
    let value: serde_json::Value = serde_json::from_slice(bytes).map_err(|e| {
        if e.is_eof() {
            Error::ChecksumMismatch("file is truncated".into())
        } else {
            Error::Malformed {
                path: path.to_path_buf(),
                msg: e.to_string(),
            }
        }
    })?;
    let version = value
        .get("schema_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::Malformed {
            path: path.to_path_buf(),
            msg: "missing schema_version".into(),
        })?;
    if version != u64::from(BUNDLE_SCHEMA_VERSION) {
        return Err(Error::SchemaVersionMismatch {
            expected: BUNDLE_SCHEMA_VERSION,
            found: version.min(u64::from(u32::MAX)) as u32,
        });
    }
    let file: BundleFile = serde_json::from_value(value).map_err(|e| Error::Malformed {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;

    let mut dec = Decoder {
        crc: crc32fast::Hasher::new(),
        path,
    };
    let mut tasks = Vec::with_capacity(file.tasks.len());
    for t in &file.tasks {
        let w_star = dec.values(&t.w_star, 1)?;
        let train = dec.split(&t.train)?;
        let validation = dec.split(&t.validation)?;
        let test = dec.split(&t.test)?;
        tasks.push(Task {
            train,
            validation,
            test,
            w_star,
        });
    }
    let crc = dec.crc.clone().finalize();
    if crc != file.checksum {
        return Err(Error::ChecksumMismatch(format!(
            "stored {:08x}, computed {crc:08x}",
            file.checksum
        )));
    }
    if file.labels.len() != file.cfg.d || file.labels.iter().any(|&l| l >= file.cfg.groups) {
        return Err(dec.malformed("labels inconsistent with cfg".into()));
    }
    Ok(TaskBundle {
        cfg: file.cfg,
        labels: file.labels,
        tasks,
    })
}

pub fn load_bundle(path: impl AsRef<Path>) -> Result<TaskBundle> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    bundle_from_bytes(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg(seed: u64) -> GenConfig {
        GenConfig {
            d: 12,
            groups: 3,
            tasks: 6,
            n: 8,
            noise_variance: 0.1,
            seed,
        }
    }

    fn check_partition(p: &[Vec<usize>], d: usize) {
        let mut seen = vec![false; d];
        let mut next = 0;
        for g in p {
            assert!(!g.is_empty());
            for &j in g {
                assert_eq!(j, next, "blocks must be contiguous");
                assert!(!seen[j]);
                seen[j] = true;
                next += 1;
            }
        }
        assert!(seen.iter().all(|s| *s));
    }

    #[test]
    fn partition_invariants() {
        for seed in 0..500 {
            let mut rng = substream(seed, Stream::Partition, 0);
            let d = 1 + (seed as usize % 40);
            let l = 1 + (seed as usize * 7) % d;
            check_partition(&random_partition(d, l, &mut rng), d);
        }
    }

    #[test]
    fn singleton_partition_when_d_equals_l() {
        let mut rng = substream(3, Stream::Partition, 0);
        let p = random_partition(5, 5, &mut rng);
        assert_eq!(p, (0..5).map(|j| vec![j]).collect::<Vec<_>>());
    }

    #[test]
    fn partition_is_deterministic() {
        let a = random_partition(4, 2, &mut substream(42, Stream::Partition, 0));
        let b = random_partition(4, 2, &mut substream(42, Stream::Partition, 0));
        assert_eq!(a, b);
    }

    #[test]
    fn partition_sizes_are_uneven() {
        let mut uneven = 0;
        for seed in 0..1000 {
            let p = random_partition(100, 10, &mut substream(seed, Stream::Partition, 0));
            let max = p.iter().map(Vec::len).max().unwrap();
            let min = p.iter().map(Vec::len).min().unwrap();
            if max as f64 / min as f64 > 5.0 {
                uneven += 1;
            }
        }
        assert!(uneven >= 500, "only {uneven} of 1000 draws had ratio > 5");
    }

    #[test]
    fn generated_bundle_invariants() {
        let b = generate(&small_cfg(1)).unwrap();
        check_partition(&b.oracle_groups(), 12);
        for t in &b.tasks {
            for split in [&t.train, &t.validation, &t.test] {
                for n in split.x.column_norms() {
                    assert!((n - 1.0).abs() < 1e-9);
                }
            }
            let active: std::collections::BTreeSet<usize> = t
                .w_star
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(j, _)| b.labels[j])
                .collect();
            assert!(!active.is_empty() && active.len() <= 2);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(
            generate(&small_cfg(9)).unwrap(),
            generate(&small_cfg(9)).unwrap()
        );
        assert_ne!(
            generate(&small_cfg(9)).unwrap(),
            generate(&small_cfg(10)).unwrap()
        );
    }

    #[test]
    fn vanishing_noise_is_exact_fit() {
        let mut cfg = small_cfg(2);
        cfg.noise_variance = 1e-12;
        let b = generate(&cfg).unwrap();
        for t in &b.tasks {
            let r = t.train.residual(&t.w_star);
            assert!(r.iter().all(|v| v.abs() < 1e-5));
        }
    }

    #[test]
    fn noise_variance_is_calibrated() {
        let cfg = GenConfig {
            d: 10,
            groups: 3,
            tasks: 50,
            n: 50,
            noise_variance: 0.1,
            seed: 4,
        };
        let b = generate(&cfg).unwrap();
        let resid: Vec<f64> = b
            .tasks
            .iter()
            .flat_map(|t| t.train.residual(&t.w_star))
            .collect();
        let mean = resid.iter().sum::<f64>() / resid.len() as f64;
        let var = resid.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (resid.len() - 1) as f64;
        assert!((var - 0.1).abs() < 0.01, "variance {var}");
    }

    #[test]
    fn rejects_bad_config() {
        let mut cfg = small_cfg(0);
        cfg.groups = 13;
        assert!(generate(&cfg).is_err());
        cfg.groups = 3;
        cfg.noise_variance = 0.0;
        assert!(generate(&cfg).is_err());
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.json");
        let p2 = dir.path().join("b.json");
        let b = generate(&small_cfg(3)).unwrap();
        save_bundle(&b, &p1).unwrap();
        let loaded = load_bundle(&p1).unwrap();
        assert_eq!(loaded, b);
        save_bundle(&loaded, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn load_detects_corruption() {
        let b = generate(&small_cfg(3)).unwrap();
        let bytes = bundle_to_bytes(&b).unwrap();
        let path = Path::new("mem");

        let truncated = &bytes[..bytes.len() / 2];
        assert!(matches!(
            bundle_from_bytes(truncated, path),
            Err(Error::ChecksumMismatch(_))
        ));

        let mut v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
        v["schema_version"] = 2.into();
        assert!(matches!(
            bundle_from_bytes(&serde_json::to_vec(&v).unwrap(), path),
            Err(Error::SchemaVersionMismatch {
                expected: 1,
                found: 2
            })
        ));

        // flip one value in a payload while keeping it decodable
        let mut v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
        let mut y: Vec<f64> = b.tasks[0].train.y.clone();
        y[0] += 1.0;
        v["tasks"][0]["train"]["y"]["data"] = B64.encode(f64_bytes(&y)).into();
        assert!(matches!(
            bundle_from_bytes(&serde_json::to_vec(&v).unwrap(), path),
            Err(Error::ChecksumMismatch(_))
        ));

        // drop the tail of a payload
        let mut v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
        v["tasks"][0]["w_star"]["data"] = B64.encode(f64_bytes(&b.tasks[0].w_star[..4])).into();
        assert!(matches!(
            bundle_from_bytes(&serde_json::to_vec(&v).unwrap(), path),
            Err(Error::ChecksumMismatch(_))
        ));
    }
}
