//! Dataset loading, split assignment and split manifests.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{make_samples, resample_track, EgoSample, Track};
use crate::trajectory_csv;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    TrainEval,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::TrainEval, SplitName::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::TrainEval => "train_eval",
            SplitName::Test => "test",
        }
    }
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown split `{s}`")))
    }
}

/// Observation / forecast window lengths in samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub n_in: usize,
    pub m_fc: usize,
    pub stride: usize,
}

impl Default for WindowConfig {
    /// 3.2 s in, 4.8 s out at 10 Hz.
    fn default() -> Self {
        Self {
            n_in: 32,
            m_fc: 48,
            stride: 1,
        }
    }
}

impl WindowConfig {
    pub fn min_track_len(&self) -> usize {
        self.n_in + self.m_fc
    }
}

/// How tracks are assigned to splits.
#[derive(Debug, Clone, PartialEq)]
pub enum SplitSpec {
    /// One split per input path, in the same order as the paths.
    ByFile(Vec<SplitName>),
    /// Fractions of a hash of the track id; must sum to 1.
    Fractional {
        train: f64,
        train_eval: f64,
        test: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceFile {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub name: SplitName,
    pub files: Vec<SourceFile>,
    pub rate_hz: f64,
    pub window: WindowConfig,
    pub tracks: usize,
}

/// The file written next to a loaded dataset: one entry per split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub split: Vec<SplitManifest>,
}

impl DatasetManifest {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest is always serializable")
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            source_name: "manifest".into(),
            line: e.span().map_or(0, |s| {
                text[..s.start.min(text.len())].lines().count().max(1) as u64
            }),
            message: e.message().to_owned(),
        })
    }

    /// Re-hashes every listed file and compares with the recorded digest.
    pub fn verify(&self) -> Result<()> {
        for s in &self.split {
            for f in &s.files {
                let actual = file_digest(Path::new(&f.path))?;
                if actual != f.sha256 {
                    return Err(Error::InvalidConfig(format!(
                        "{}: digest {actual} does not match manifest {}",
                        f.path, f.sha256
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub name: SplitName,
    pub tracks: Vec<Track>,
    pub manifest: SplitManifest,
}

impl DatasetSplit {
    pub fn samples(&self) -> Vec<EgoSample> {
        let w = self.manifest.window;
        self.tracks
            .iter()
            .flat_map(|t| make_samples(t, w.n_in, w.m_fc, w.stride))
            .collect()
    }
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

/// Position of `track_id` in `[0, 1)`, from the first 8 bytes of its SHA-256.
pub fn track_hash_unit(track_id: &str) -> f64 {
    let d = Sha256::digest(track_id.as_bytes());
    let v = u64::from_be_bytes(d[..8].try_into().expect("digest has 32 bytes"));
    (v >> 11) as f64 / (1u64 << 53) as f64
}

fn fractional_split(track_id: &str, train: f64, train_eval: f64) -> SplitName {
    let u = track_hash_unit(track_id);
    if u < train {
        SplitName::Train
    } else if u < train + train_eval {
        SplitName::TrainEval
    } else {
        SplitName::Test
    }
}

/// Reads, resamples, filters and splits trajectory CSV files.
///
/// Tracks that cannot be resampled or are shorter than one full window after
/// resampling are dropped. Returns all three splits (some possibly empty).
pub fn load_dataset(
    paths: &[PathBuf],
    rate_hz: f64,
    window: WindowConfig,
    spec: &SplitSpec,
) -> Result<Vec<DatasetSplit>> {
    match spec {
        SplitSpec::ByFile(names) if names.len() != paths.len() => {
            return Err(Error::InvalidConfig(format!(
                "{} split names for {} files",
                names.len(),
                paths.len()
            )));
        }
        SplitSpec::Fractional {
            train,
            train_eval,
            test,
        } => {
            let f = [*train, *train_eval, *test];
            if f.iter().any(|v| v.is_nan() || *v < 0.0)
                || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9
            {
                return Err(Error::InvalidConfig(
                    "split fractions must be >= 0 and sum to 1".into(),
                ));
            }
        }
        _ => {}
    }
    let mut splits: Vec<DatasetSplit> = SplitName::ALL
        .into_iter()
        .map(|name| DatasetSplit {
            name,
            tracks: Vec::new(),
            manifest: SplitManifest {
                name,
                files: Vec::new(),
                rate_hz,
                window,
                tracks: 0,
            },
        })
        .collect();
    let slot = |n: SplitName| {
        SplitName::ALL
            .iter()
            .position(|&m| m == n)
            .expect("known split")
    };
    let mut owner: HashMap<String, SplitName> = HashMap::new();

    for (i, path) in paths.iter().enumerate() {
        let source = SourceFile {
            path: path.display().to_string(),
            sha256: file_digest(path)?,
        };
        let mut used = [false; 3];
        for track in trajectory_csv::read_tracks(path)? {
            let name = match spec {
                SplitSpec::ByFile(names) => names[i],
                SplitSpec::Fractional {
                    train, train_eval, ..
                } => fractional_split(track.id(), *train, *train_eval),
            };
            if let Some(prev) = owner.insert(track.id().to_owned(), name) {
                return Err(Error::invalid_track(
                    track.id(),
                    format!("appears twice (splits {prev} and {name})"),
                ));
            }
            let resampled = match resample_track(&track, rate_hz) {
                Ok(t) => t,
                Err(Error::TrackTooShort { .. }) => continue,
                Err(e) => return Err(e),
            };
            if resampled.len() < window.min_track_len() {
                continue;
            }
            used[slot(name)] = true;
            splits[slot(name)].tracks.push(resampled);
        }
        for (k, u) in used.iter().enumerate() {
            if *u || matches!(spec, SplitSpec::ByFile(n) if slot(n[i]) == k) {
                splits[k].manifest.files.push(source.clone());
            }
        }
    }
    if splits.iter().all(|s| s.tracks.is_empty()) {
        return Err(Error::EmptyDataset);
    }
    for s in &mut splits {
        s.manifest.tracks = s.tracks.len();
    }
    Ok(splits)
}

pub fn manifest_of(splits: &[DatasetSplit]) -> DatasetManifest {
    DatasetManifest {
        split: splits.iter().map(|s| s.manifest.clone()).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::TrackPoint;
    use std::io::Write;

    fn write_csv(dir: &Path, name: &str, tracks: &[Track]) -> PathBuf {
        let path = dir.join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        trajectory_csv::write_tracks(&mut f, tracks).unwrap();
        f.flush().unwrap();
        path
    }

    fn walk(id: &str, seconds: f64) -> Track {
        let n = (seconds * 10.0).round() as usize + 1;
        let pts = (0..n)
            .map(|k| TrackPoint::new(k as f64 * 0.1, 1.3 * k as f64 * 0.1, 0.0))
            .collect();
        Track::new(id, pts).unwrap()
    }

    #[test]
    fn length_filter() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_csv(
            dir.path(),
            "a.csv",
            &[walk("long", 10.0), walk("short", 5.0)],
        );
        let splits = load_dataset(
            &[path],
            10.0,
            WindowConfig::default(),
            &SplitSpec::ByFile(vec![SplitName::Test]),
        )
        .unwrap();
        let test = &splits[2];
        assert_eq!(test.name, SplitName::Test);
        assert_eq!(test.tracks.len(), 1);
        assert_eq!(test.tracks[0].id(), "long");
        assert_eq!(test.samples().len(), 101 - 80 + 1);
        assert!(splits[0].tracks.is_empty());
    }

    #[test]
    fn empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_csv(dir.path(), "a.csv", &[walk("short", 5.0)]);
        let err = load_dataset(
            &[path],
            10.0,
            WindowConfig::default(),
            &SplitSpec::ByFile(vec![SplitName::Train]),
        );
        assert!(matches!(err, Err(Error::EmptyDataset)));
    }

    #[test]
    fn hash_split_sizes_and_disjointness() {
        let dir = tempfile::tempdir().unwrap();
        let tracks: Vec<Track> = (0..1000).map(|i| walk(&format!("ped-{i}"), 8.0)).collect();
        let path = write_csv(dir.path(), "all.csv", &tracks);
        let spec = SplitSpec::Fractional {
            train: 0.7,
            train_eval: 0.1,
            test: 0.2,
        };
        let splits = load_dataset(
            std::slice::from_ref(&path),
            10.0,
            WindowConfig::default(),
            &spec,
        )
        .unwrap();
        let sizes: Vec<usize> = splits.iter().map(|s| s.tracks.len()).collect();
        assert_eq!(sizes.iter().sum::<usize>(), 1000);
        for (size, nominal) in sizes.iter().zip([700.0, 100.0, 200.0]) {
            assert!((*size as f64 - nominal).abs() <= 0.05 * 1000.0, "{sizes:?}");
        }
        let mut ids: Vec<&str> = splits
            .iter()
            .flat_map(|s| s.tracks.iter().map(Track::id))
            .collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 1000);
        assert_eq!(
            splits,
            load_dataset(&[path], 10.0, WindowConfig::default(), &spec).unwrap()
        );
    }

    #[test]
    fn duplicate_track_across_files_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let a = write_csv(dir.path(), "a.csv", &[walk("p1", 9.0)]);
        let b = write_csv(dir.path(), "b.csv", &[walk("p1", 9.0)]);
        let spec = SplitSpec::ByFile(vec![SplitName::Train, SplitName::Test]);
        assert!(matches!(
            load_dataset(&[a, b], 10.0, WindowConfig::default(), &spec),
            Err(Error::InvalidTrack { .. })
        ));
    }

    #[test]
    fn malformed_row_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "track_id,t,x,y\na,0,0,0\na,0.1,oops,0\n").unwrap();
        let err = load_dataset(
            &[path],
            10.0,
            WindowConfig::default(),
            &SplitSpec::ByFile(vec![SplitName::Train]),
        );
        assert!(matches!(err, Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn manifest_roundtrip_and_verification() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_csv(dir.path(), "a.csv", &[walk("p1", 9.0), walk("p2", 12.0)]);
        let splits = load_dataset(
            std::slice::from_ref(&path),
            10.0,
            WindowConfig::default(),
            &SplitSpec::ByFile(vec![SplitName::Train]),
        )
        .unwrap();
        let manifest = manifest_of(&splits);
        let text = manifest.to_toml();
        let parsed = DatasetManifest::parse(&text).unwrap();
        assert_eq!(parsed, manifest);
        assert_eq!(parsed.split[0].tracks, 2);
        parsed.verify().unwrap();
        std::fs::write(&path, "track_id,t,x,y\n").unwrap();
        assert!(parsed.verify().is_err());
        assert!(DatasetManifest::parse("[[split]]\nname = 3\n").is_err());
    }
}
