//! Deterministic dataset generation from the sim world, a portable binary
//! shard format with an FNV-1a trailer, and seen/unseen split management.
//!
//! Shard layout (little-endian): magic "GZIM", version u32, record_count u64,
//! then per record: track_seed u64, step_index u32, steering_deg f64,
//! fixation_count u16, fixations (x,y,w as f64) x count, frame bytes
//! 66*200 u8; followed by the FNV-1a-64 checksum of all preceding bytes.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::gazemap::Fixation;
use crate::simworld::{
    generate_track, run_episode, ExpertPolicy, GazeSource, Scenario, TrackGenParams, TrackSpec,
    FRAME_H, FRAME_W,
};

pub const SHARD_MAGIC: [u8; 4] = *b"GZIM";
pub const SHARD_VERSION: u32 = 1;
const FRAME_BYTES: usize = FRAME_W * FRAME_H;

/// One frame of expert demonstration.
#[derive(Debug, Clone, PartialEq)]
pub struct DriveRecord {
    pub frame: Vec<u8>,
    pub steering_deg: f64,
    pub fixations: Vec<Fixation>,
    pub track_seed: u64,
    pub step_index: u32,
}

#[derive(Debug, thiserror::Error)]
pub enum DatastoreError {
    #[error("bad magic in {0}")]
    BadMagic(PathBuf),
    #[error("unsupported shard version {got} in {path} (expected {SHARD_VERSION})")]
    VersionMismatch { path: PathBuf, got: u32 },
    #[error("truncated shard {0}")]
    Truncated(PathBuf),
    #[error("checksum mismatch in {0}")]
    ChecksumMismatch(PathBuf),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
}

pub type Result<T> = std::result::Result<T, DatastoreError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    SeenEval,
    UnseenEval,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShardEntry {
    pub file: String,
    pub record_count: u64,
    pub checksum: u64,
    pub split: Split,
    pub track_seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub frame_width: usize,
    pub frame_height: usize,
    pub master_seed: u64,
    pub shards: Vec<ShardEntry>,
    /// track_seed -> split, no seed in more than one split
    pub splits: BTreeMap<u64, Split>,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|source| DatastoreError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_slice(&bytes)
            .map_err(|e| DatastoreError::InvalidManifest(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = serde_json::to_vec_pretty(self)
            .map_err(|e| DatastoreError::InvalidManifest(e.to_string()))?;
        fs::write(path, bytes).map_err(|source| DatastoreError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn shard_files(&self, split: Split) -> Vec<&ShardEntry> {
        self.shards.iter().filter(|s| s.split == split).collect()
    }
}

/// FNV-1a 64-bit running hash.
#[derive(Debug, Clone, Copy)]
pub struct Fnv1a(u64);

impl Default for Fnv1a {
    fn default() -> Self {
        Fnv1a(0xcbf29ce484222325)
    }
}

impl Fnv1a {
    pub fn update(&mut self, bytes: &[u8]) {
        for b in bytes {
            self.0 ^= *b as u64;
            self.0 = self.0.wrapping_mul(0x100000001b3);
        }
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

struct HashingWriter<W: Write> {
    inner: W,
    hash: Fnv1a,
}

impl<W: Write> HashingWriter<W> {
    fn write(&mut self, bytes: &[u8], path: &Path) -> Result<()> {
        self.hash.update(bytes);
        self.inner
            .write_all(bytes)
            .map_err(|source| DatastoreError::Io {
                path: path.to_path_buf(),
                source,
            })
    }
}

/// Serialize records to `path`; returns the shard checksum.
pub fn write_shard(records: &[DriveRecord], path: &Path) -> Result<u64> {
    let file = fs::File::create(path).map_err(|source| DatastoreError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut w = HashingWriter {
        inner: std::io::BufWriter::new(file),
        hash: Fnv1a::default(),
    };
    w.write(&SHARD_MAGIC, path)?;
    w.write(&SHARD_VERSION.to_le_bytes(), path)?;
    w.write(&(records.len() as u64).to_le_bytes(), path)?;
    for r in records {
        assert_eq!(r.frame.len(), FRAME_BYTES, "frame geometry is fixed");
        w.write(&r.track_seed.to_le_bytes(), path)?;
        w.write(&r.step_index.to_le_bytes(), path)?;
        w.write(&r.steering_deg.to_le_bytes(), path)?;
        w.write(&(r.fixations.len() as u16).to_le_bytes(), path)?;
        for f in &r.fixations {
            w.write(&f.x.to_le_bytes(), path)?;
            w.write(&f.y.to_le_bytes(), path)?;
            w.write(&f.weight.to_le_bytes(), path)?;
        }
        w.write(&r.frame, path)?;
    }
    let checksum = w.hash.finish();
    w.inner
        .write_all(&checksum.to_le_bytes())
        .and_then(|_| w.inner.flush())
        .map_err(|source| DatastoreError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    Ok(checksum)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(DatastoreError::Truncated(self.path.to_path_buf()));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Read a shard back; validates magic, version, completeness and checksum.
pub fn read_shard(path: &Path) -> Result<Vec<DriveRecord>> {
    let bytes = fs::read(path).map_err(|source| DatastoreError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    if bytes.len() < 8 {
        return Err(DatastoreError::Truncated(path.to_path_buf()));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 8);
    let mut hash = Fnv1a::default();
    hash.update(body);
    if hash.finish() != u64::from_le_bytes(trailer.try_into().unwrap()) {
        // distinguish a clobbered header from a clobbered payload
        if body.len() >= 4 && body[..4] != SHARD_MAGIC {
            return Err(DatastoreError::BadMagic(path.to_path_buf()));
        }
        return Err(DatastoreError::ChecksumMismatch(path.to_path_buf()));
    }
    let mut c = Cursor {
        bytes: body,
        pos: 0,
        path,
    };
    if c.take(4)? != SHARD_MAGIC {
        return Err(DatastoreError::BadMagic(path.to_path_buf()));
    }
    let version = c.u32()?;
    if version != SHARD_VERSION {
        return Err(DatastoreError::VersionMismatch {
            path: path.to_path_buf(),
            got: version,
        });
    }
    let count = c.u64()?;
    let mut records = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let track_seed = c.u64()?;
        let step_index = c.u32()?;
        let steering_deg = c.f64()?;
        let n_fix = c.u16()?;
        let mut fixations = Vec::with_capacity(n_fix as usize);
        for _ in 0..n_fix {
            fixations.push(Fixation {
                x: c.f64()?,
                y: c.f64()?,
                weight: c.f64()?,
            });
        }
        let frame = c.take(FRAME_BYTES)?.to_vec();
        records.push(DriveRecord {
            frame,
            steering_deg,
            fixations,
            track_seed,
            step_index,
        });
    }
    if c.pos != body.len() {
        return Err(DatastoreError::Truncated(path.to_path_buf()));
    }
    Ok(records)
}

/// Load every record of a split, shard order as listed in the manifest.
pub fn read_split(manifest: &DatasetManifest, dir: &Path, split: Split) -> Result<Vec<DriveRecord>> {
    let mut out = Vec::new();
    for entry in manifest.shard_files(split) {
        out.extend(read_shard(&dir.join(&entry.file))?);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct DatasetParams {
    pub track_gen: TrackGenParams,
    pub n_train_tracks: usize,
    pub n_seen_eval_trials: usize,
    pub n_unseen_tracks: usize,
    pub episode_duration_s: f64,
    pub cars: bool,
    /// Std-dev (degrees) of zero-mean Gaussian noise added to the recorded
    /// steering label, modelling demonstrator motor noise. The driven
    /// trajectory itself stays clean; only the label is perturbed.
    pub demo_noise_deg: f64,
}

impl Default for DatasetParams {
    fn default() -> Self {
        DatasetParams {
            track_gen: TrackGenParams::default(),
            n_train_tracks: 8,
            n_seen_eval_trials: 4,
            n_unseen_tracks: 4,
            episode_duration_s: 40.0,
            cars: true,
            demo_noise_deg: 1.0,
        }
    }
}

/// Generate expert episodes for every split and write shards plus manifest
/// into `out_dir`. Fully deterministic in `master_seed`.
pub fn build_dataset(
    params: &DatasetParams,
    master_seed: u64,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    fs::create_dir_all(out_dir).map_err(|source| DatastoreError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let mut shards = Vec::new();
    let mut splits = BTreeMap::new();

    // track seeds are derived disjointly from the master seed
    let train_seeds: Vec<u64> = (0..params.n_train_tracks as u64)
        .map(|i| master_seed.wrapping_mul(1_000_003).wrapping_add(i))
        .collect();
    let unseen_seeds: Vec<u64> = (0..params.n_unseen_tracks as u64)
        .map(|i| {
            master_seed
                .wrapping_mul(1_000_003)
                .wrapping_add(0x8000_0000_0000 + i)
        })
        .collect();

    let mut emit = |seed: u64, split: Split, trial: u64, idx: usize| -> Result<()> {
        let spec = generate_track(seed, &params.track_gen);
        let records = collect_episode(
            &spec,
            params.cars,
            params.episode_duration_s,
            trial,
            params.demo_noise_deg,
        );
        let file = format!(
            "{}_{idx:03}.gzim",
            match split {
                Split::Train => "train",
                Split::SeenEval => "seen",
                Split::UnseenEval => "unseen",
            }
        );
        let checksum = write_shard(&records, &out_dir.join(&file))?;
        shards.push(ShardEntry {
            file,
            record_count: records.len() as u64,
            checksum,
            split,
            track_seed: seed,
        });
        Ok(())
    };

    for (i, seed) in train_seeds.iter().enumerate() {
        emit(*seed, Split::Train, master_seed.wrapping_add(i as u64), i)?;
    }
    for trial in 0..params.n_seen_eval_trials {
        let seed = train_seeds[trial % train_seeds.len()];
        emit(
            seed,
            Split::SeenEval,
            master_seed.wrapping_add(10_000 + trial as u64),
            trial,
        )?;
    }
    for (i, seed) in unseen_seeds.iter().enumerate() {
        emit(
            *seed,
            Split::UnseenEval,
            master_seed.wrapping_add(20_000 + i as u64),
            i,
        )?;
    }

    for seed in &train_seeds {
        splits.insert(*seed, Split::Train);
    }
    for seed in &unseen_seeds {
        assert!(
            !splits.contains_key(seed),
            "unseen seed collides with a train seed"
        );
        splits.insert(*seed, Split::UnseenEval);
    }

    let manifest = DatasetManifest {
        format_version: SHARD_VERSION,
        frame_width: FRAME_W,
        frame_height: FRAME_H,
        master_seed,
        shards,
        splits,
    };
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}

/// Run one expert episode and capture (frame, steering, fixations) per step.
fn collect_episode(
    spec: &TrackSpec,
    cars: bool,
    duration_s: f64,
    trial_seed: u64,
    demo_noise_deg: f64,
) -> Vec<DriveRecord> {
    use crate::simworld::{Policy, PolicyContext};
    use std::cell::RefCell;

    struct Recorder {
        inner: ExpertPolicy,
        records: RefCell<Vec<DriveRecord>>,
        seed: u64,
    }
    impl Policy for Recorder {
        fn steer(&self, ctx: &PolicyContext) -> f64 {
            let steering = self.inner.steer(ctx);
            self.records.borrow_mut().push(DriveRecord {
                frame: ctx.frame.to_u8(),
                steering_deg: steering,
                fixations: Vec::new(), // filled from the trace afterwards
                track_seed: self.seed,
                step_index: 0,
            });
            steering
        }
    }

    let recorder = Recorder {
        inner: ExpertPolicy::default(),
        records: RefCell::new(Vec::new()),
        seed: spec.seed,
    };
    let scenario = Scenario::new(spec.clone(), cars, duration_s);
    let result = run_episode(&recorder, &scenario, GazeSource::NoneRequired, trial_seed);
    let mut records = recorder.records.into_inner();
    // the episode may stop early; the trace is the source of truth
    records.truncate(result.trace.len());
    if demo_noise_deg > 0.0 {
        // Demonstrator motor noise on the recorded label only: the expert
        // drives cleanly, but the label the learner sees is noisy, as with
        // human demonstrations.
        let mut rng = ChaCha8Rng::seed_from_u64(trial_seed ^ 0xde30_0153);
        let noise = Normal::new(0.0, demo_noise_deg).expect("valid std dev");
        for rec in &mut records {
            rec.steering_deg += noise.sample(&mut rng);
        }
    }
    for (rec, step) in records.iter_mut().zip(result.trace.iter()) {
        rec.step_index = step.step as u32;
        rec.fixations = step
            .fixations
            .iter()
            .map(|f| Fixation {
                x: f[0],
                y: f[1],
                weight: f[2],
            })
            .collect();
    }
    records
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_records() -> Vec<DriveRecord> {
        vec![
            DriveRecord {
                frame: vec![7; FRAME_BYTES],
                steering_deg: -3.25,
                fixations: vec![Fixation::new(10.5, 20.25)],
                track_seed: 42,
                step_index: 0,
            },
            DriveRecord {
                frame: vec![200; FRAME_BYTES],
                steering_deg: 11.0,
                fixations: vec![],
                track_seed: 42,
                step_index: 1,
            },
        ]
    }

    #[test]
    fn shard_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.gzim");
        let records = sample_records();
        write_shard(&records, &path).unwrap();
        assert_eq!(read_shard(&path).unwrap(), records);
    }

    #[test]
    fn truncation_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.gzim");
        write_shard(&sample_records(), &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(
            read_shard(&path),
            Err(DatastoreError::Truncated(_)) | Err(DatastoreError::ChecksumMismatch(_))
        ));
    }

    #[test]
    fn bad_magic_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.gzim");
        write_shard(&sample_records(), &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[..4].copy_from_slice(b"NOPE");
        fs::write(&path, bytes).unwrap();
        assert!(matches!(read_shard(&path), Err(DatastoreError::BadMagic(_))));
    }

    #[test]
    fn payload_corruption_is_a_checksum_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.gzim");
        write_shard(&sample_records(), &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xFF;
        fs::write(&path, bytes).unwrap();
        assert!(matches!(
            read_shard(&path),
            Err(DatastoreError::ChecksumMismatch(_))
        ));
    }

    #[test]
    fn version_mismatch_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.gzim");
        write_shard(&sample_records(), &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[4] = 99; // version field
        let trailer_start = bytes.len() - 8;
        let mut hash = Fnv1a::default();
        hash.update(&bytes[..trailer_start]);
        let sum = hash.finish().to_le_bytes();
        bytes[trailer_start..].copy_from_slice(&sum);
        fs::write(&path, bytes).unwrap();
        assert!(matches!(
            read_shard(&path),
            Err(DatastoreError::VersionMismatch { got: 99, .. })
        ));
    }

    #[test]
    fn build_dataset_is_deterministic_and_disjoint() {
        let small = DatasetParams {
            n_train_tracks: 2,
            n_seen_eval_trials: 1,
            n_unseen_tracks: 1,
            episode_duration_s: 2.0,
            ..DatasetParams::default()
        };
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let m1 = build_dataset(&small, 99, d1.path()).unwrap();
        let m2 = build_dataset(&small, 99, d2.path()).unwrap();
        let sums1: Vec<u64> = m1.shards.iter().map(|s| s.checksum).collect();
        let sums2: Vec<u64> = m2.shards.iter().map(|s| s.checksum).collect();
        assert_eq!(sums1, sums2);

        let train: Vec<u64> = m1
            .splits
            .iter()
            .filter(|(_, s)| **s == Split::Train)
            .map(|(k, _)| *k)
            .collect();
        let unseen: Vec<u64> = m1
            .splits
            .iter()
            .filter(|(_, s)| **s == Split::UnseenEval)
            .map(|(k, _)| *k)
            .collect();
        assert!(train.iter().all(|t| !unseen.contains(t)));
        // no unseen seed backs any training shard
        for shard in m1.shard_files(Split::Train) {
            assert!(!unseen.contains(&shard.track_seed));
        }

        // recount oracle: manifest counts match the shard contents
        for shard in &m1.shards {
            let records = read_shard(&d1.path().join(&shard.file)).unwrap();
            assert_eq!(records.len() as u64, shard.record_count);
            assert!(records.iter().all(|r| r.track_seed == shard.track_seed));
        }
    }
}
