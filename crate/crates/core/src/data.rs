//! Dataset ingestion (IDX image containers), image preprocessing into
//! rotation angles, synthetic datasets, and CSV export.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util::derived_rng;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const IMAGE_SIDE: usize = 28;
pub const POOL: usize = 7;
/// Features per preprocessed image.
pub const ENCODED_LEN: usize = (IMAGE_SIDE / POOL) * (IMAGE_SIDE / POOL);

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{file}: bad magic 0x{found:08x} at byte 0, expected 0x{expected:08x}")]
    BadMagic {
        file: &'static str,
        found: u32,
        expected: u32,
    },
    #[error("{file}: truncated at byte {offset}: need {needed} bytes, file has {len}")]
    Truncated {
        file: &'static str,
        offset: usize,
        needed: usize,
        len: usize,
    },
    #[error("{file}: {extra} trailing bytes after byte {offset}")]
    Trailing {
        file: &'static str,
        offset: usize,
        extra: usize,
    },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("bad shape: {0}")]
    Shape(String),
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("csv line {line}: {msg}")]
    CsvValue { line: u64, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Raw grayscale images with labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImages {
    pub rows: usize,
    pub cols: usize,
    /// Row-major pixels, `rows * cols` bytes per image.
    pub pixels: Vec<u8>,
    pub labels: Vec<u8>,
}

impl RawImages {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let size = self.rows * self.cols;
        &self.pixels[i * size..(i + 1) * size]
    }
}

fn read_u32(bytes: &[u8], offset: usize, file: &'static str) -> Result<u32, DataError> {
    let slice = bytes.get(offset..offset + 4).ok_or(DataError::Truncated {
        file,
        offset,
        needed: 4,
        len: bytes.len(),
    })?;
    Ok(u32::from_be_bytes(slice.try_into().expect("4 bytes")))
}

fn check_magic(bytes: &[u8], expected: u32, file: &'static str) -> Result<(), DataError> {
    let found = read_u32(bytes, 0, file)?;
    if found != expected {
        return Err(DataError::BadMagic {
            file,
            found,
            expected,
        });
    }
    Ok(())
}

fn take_body<'a>(
    bytes: &'a [u8],
    offset: usize,
    needed: usize,
    file: &'static str,
) -> Result<&'a [u8], DataError> {
    let end = offset.checked_add(needed).ok_or_else(|| DataError::Shape("size overflow".into()))?;
    if bytes.len() < end {
        return Err(DataError::Truncated {
            file,
            offset,
            needed,
            len: bytes.len(),
        });
    }
    if bytes.len() > end {
        return Err(DataError::Trailing {
            file,
            offset: end,
            extra: bytes.len() - end,
        });
    }
    Ok(&bytes[offset..end])
}

/// Parses an IDX3 image container: `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>), DataError> {
    const FILE: &str = "images";
    check_magic(bytes, IMAGE_MAGIC, FILE)?;
    let count = read_u32(bytes, 4, FILE)? as usize;
    let rows = read_u32(bytes, 8, FILE)? as usize;
    let cols = read_u32(bytes, 12, FILE)? as usize;
    let needed = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| DataError::Shape("image dimensions overflow".into()))?;
    Ok((count, rows, cols, take_body(bytes, 16, needed, FILE)?.to_vec()))
}

/// Parses an IDX1 label container.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>, DataError> {
    const FILE: &str = "labels";
    check_magic(bytes, LABEL_MAGIC, FILE)?;
    let count = read_u32(bytes, 4, FILE)? as usize;
    Ok(take_body(bytes, 8, count, FILE)?.to_vec())
}

pub fn load_idx_images(images_path: &Path, labels_path: &Path) -> Result<RawImages, DataError> {
    let mut buf = Vec::new();
    std::fs::File::open(images_path)?.read_to_end(&mut buf)?;
    let (count, rows, cols, pixels) = parse_idx_images(&buf)?;
    let labels = parse_idx_labels(&std::fs::read(labels_path)?)?;
    if labels.len() != count {
        return Err(DataError::CountMismatch {
            images: count,
            labels: labels.len(),
        });
    }
    Ok(RawImages {
        rows,
        cols,
        pixels,
        labels,
    })
}

pub fn write_idx_images<W: Write>(mut w: W, images: &RawImages) -> Result<(), DataError> {
    w.write_all(&IMAGE_MAGIC.to_be_bytes())?;
    for v in [images.len(), images.rows, images.cols] {
        let v = u32::try_from(v).map_err(|_| DataError::Shape("dimension exceeds u32".into()))?;
        w.write_all(&v.to_be_bytes())?;
    }
    w.write_all(&images.pixels)?;
    Ok(())
}

pub fn write_idx_labels<W: Write>(mut w: W, labels: &[u8]) -> Result<(), DataError> {
    w.write_all(&LABEL_MAGIC.to_be_bytes())?;
    let n = u32::try_from(labels.len()).map_err(|_| DataError::Shape("count exceeds u32".into()))?;
    w.write_all(&n.to_be_bytes())?;
    w.write_all(labels)?;
    Ok(())
}

/// 7x7 max pooling of a 28x28 image into 16 angles `max * 2pi / 256`,
/// row-major over the 4x4 patch grid.
pub fn preprocess(image: &[u8]) -> Result<Vec<f64>, DataError> {
    if image.len() != IMAGE_SIDE * IMAGE_SIDE {
        return Err(DataError::Shape(format!(
            "expected {} pixels, got {}",
            IMAGE_SIDE * IMAGE_SIDE,
            image.len()
        )));
    }
    let grid = IMAGE_SIDE / POOL;
    let mut out = vec![0.0f64; grid * grid];
    for (pr, row) in image.chunks(IMAGE_SIDE).enumerate() {
        for (pc, chunk) in row.chunks(POOL).enumerate() {
            let peak = f64::from(*chunk.iter().max().expect("non-empty patch row"));
            let slot = &mut out[(pr / POOL) * grid + pc];
            *slot = slot.max(peak);
        }
    }
    for v in &mut out {
        *v *= TAU / 256.0;
    }
    Ok(out)
}

/// Preprocesses every image in parallel.
pub fn preprocess_all(images: &RawImages) -> Result<Vec<Vec<f64>>, DataError> {
    (0..images.len())
        .into_par_iter()
        .map(|i| preprocess(images.image(i)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Encoded samples. Labels are class ids (as reals) for classification and
/// arbitrary reals for regression.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub ids: Vec<usize>,
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
    pub split: Vec<Split>,
    /// Planted coefficients for the linear synthetic kind.
    pub planted: Option<Vec<f64>>,
}

impl Dataset {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<f64>) -> Result<Self, DataError> {
        if features.len() != labels.len() {
            return Err(DataError::Shape(format!(
                "{} feature rows but {} labels",
                features.len(),
                labels.len()
            )));
        }
        if let Some(first) = features.first() {
            if features.iter().any(|r| r.len() != first.len()) {
                return Err(DataError::Shape("ragged feature rows".into()));
            }
        }
        let d = labels.len();
        Ok(Self {
            ids: (0..d).collect(),
            features,
            labels,
            split: vec![Split::Train; d],
            planted: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Feature dimension (0 when empty).
    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn subset(&self, which: Split) -> Dataset {
        let keep: Vec<usize> = (0..self.len()).filter(|&i| self.split[i] == which).collect();
        Dataset {
            ids: keep.iter().map(|&i| self.ids[i]).collect(),
            features: keep.iter().map(|&i| self.features[i].clone()).collect(),
            labels: keep.iter().map(|&i| self.labels[i]).collect(),
            split: vec![which; keep.len()],
            planted: self.planted.clone(),
        }
    }

    /// Labels as class ids; fails on non-integer labels.
    pub fn class_labels(&self) -> Result<Vec<usize>, DataError> {
        self.labels
            .iter()
            .map(|&v| {
                if v >= 0.0 && v.fract() == 0.0 {
                    Ok(v as usize)
                } else {
                    Err(DataError::Params(format!("label {v} is not a class id")))
                }
            })
            .collect()
    }

    /// Writes `id,label,f0..f{l-1}` preceded by `# ` comment lines.
    pub fn write_csv<W: Write>(&self, mut w: W, comments: &[String]) -> Result<(), DataError> {
        for c in comments {
            writeln!(w, "# {c}")?;
        }
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["id".to_string(), "label".to_string()];
        header.extend((0..self.dim()).map(|j| format!("f{j}")));
        out.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec = vec![self.ids[i].to_string(), fmt_real(self.labels[i])];
            rec.extend(self.features[i].iter().map(|&v| fmt_real(v)));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Dataset, DataError> {
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
        let header = rdr.headers()?.clone();
        if header.len() < 2 || &header[0] != "id" || &header[1] != "label" {
            return Err(DataError::CsvValue {
                line: 1,
                msg: "header must start with id,label".into(),
            });
        }
        let mut ids = Vec::new();
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let bad = |msg: String| DataError::CsvValue { line, msg };
            ids.push(rec[0].parse::<usize>().map_err(|e| bad(format!("id: {e}")))?);
            labels.push(parse_real(&rec[1]).map_err(bad)?);
            features.push(
                rec.iter()
                    .skip(2)
                    .map(parse_real)
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|msg| DataError::CsvValue { line, msg })?,
            );
        }
        let mut ds = Dataset::new(features, labels)?;
        ds.ids = ids;
        Ok(ds)
    }

    pub fn save_csv(&self, path: &Path, comments: &[String]) -> Result<(), DataError> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(f, comments)
    }

    pub fn load_csv(path: &Path) -> Result<Dataset, DataError> {
        Dataset::read_csv(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// Shortest representation that round-trips exactly.
pub fn fmt_real(v: f64) -> String {
    format!("{v:?}")
}

pub fn parse_real(s: &str) -> Result<f64, String> {
    s.trim().parse::<f64>().map_err(|e| format!("{s:?}: {e}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthKind {
    /// Gaussian clusters, two per class, mirrored through the point
    /// `(pi, ..., pi)`; the classes are not linearly separable.
    Blobs,
    /// Label is the parity of `bits` features exceeding pi.
    Parity,
    /// Real labels `y = <w, x>` with planted standard-normal `w`.
    Linear,
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SynthKind::Blobs => "blobs",
            SynthKind::Parity => "parity",
            SynthKind::Linear => "linear",
        })
    }
}

impl FromStr for SynthKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "blobs" => Ok(SynthKind::Blobs),
            "parity" => Ok(SynthKind::Parity),
            "linear" => Ok(SynthKind::Linear),
            _ => Err(format!("unknown synthetic kind {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub d: usize,
    pub dim: usize,
    /// Blob standard deviation.
    pub spread: f64,
    /// Parity arity.
    pub bits: usize,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            d: 100,
            dim: ENCODED_LEN,
            spread: 0.6,
            bits: 2,
        }
    }
}

// largest f64 strictly below 2pi
fn below_tau() -> f64 {
    f64::from_bits(TAU.to_bits() - 1)
}

pub fn synth_dataset<R: Rng + ?Sized>(
    kind: SynthKind,
    params: &SynthParams,
    rng: &mut R,
) -> Result<Dataset, DataError> {
    let SynthParams { d, dim, spread, bits } = *params;
    if d == 0 || dim == 0 {
        return Err(DataError::Params(format!("need d, dim >= 1, got d={d}, dim={dim}")));
    }
    let uniform = |rng: &mut R| -> Vec<f64> { (0..dim).map(|_| rng.gen_range(0.0..TAU)).collect() };
    let mut planted = None;
    let (features, labels): (Vec<Vec<f64>>, Vec<f64>) = match kind {
        SynthKind::Blobs => {
            if !(spread >= 0.0 && spread.is_finite()) {
                return Err(DataError::Params(format!("spread must be >= 0, got {spread}")));
            }
            // class c has the two centers pi +- v_c, so both class means sit at pi
            let offsets: Vec<Vec<f64>> = (0..2)
                .map(|_| {
                    (0..dim)
                        .map(|_| {
                            let mag = rng.gen_range(1.0..PI - 1.0);
                            if rng.gen::<bool>() { mag } else { -mag }
                        })
                        .collect()
                })
                .collect();
            let noise = Normal::new(0.0, spread).expect("finite spread");
            (0..d)
                .map(|i| {
                    let class = i % 2;
                    let sign = if (i / 2) % 2 == 0 { 1.0 } else { -1.0 };
                    let x = offsets[class]
                        .iter()
                        .map(|&v| (PI + sign * v + noise.sample(rng)).clamp(0.0, below_tau()))
                        .collect();
                    (x, class as f64)
                })
                .unzip()
        }
        SynthKind::Parity => {
            if bits == 0 || bits > dim {
                return Err(DataError::Params(format!("parity bits must be in 1..={dim}, got {bits}")));
            }
            (0..d)
                .map(|i| {
                    let class = i % 2;
                    let mut x = uniform(rng);
                    let parity = x[..bits].iter().filter(|&&v| v >= PI).count() % 2;
                    if parity != class {
                        // rotating by pi flips one bit and keeps x uniform
                        x[0] = (x[0] + PI) % TAU;
                    }
                    (x, class as f64)
                })
                .unzip()
        }
        SynthKind::Linear => {
            let w: Vec<f64> = (0..dim).map(|_| Normal::new(0.0, 1.0).expect("unit normal").sample(rng)).collect();
            let rows: (Vec<Vec<f64>>, Vec<f64>) = (0..d)
                .map(|_| {
                    let x = uniform(rng);
                    let y: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum();
                    (x, y)
                })
                .unzip();
            planted = Some(w);
            rows
        }
    };
    let mut ds = Dataset::new(features, labels)?;
    ds.planted = planted;
    Ok(ds)
}

/// Per-class train/test selection: each class's indices in file order are
/// shuffled with a generator derived from `(seed, class)`; the first
/// `n_train` go to train and the next `n_test` to test. Labels become the
/// position of the class in `classes`.
pub fn sample_per_class(
    images: &RawImages,
    classes: &[u8],
    n_train: usize,
    n_test: usize,
    seed: u64,
) -> Result<Dataset, DataError> {
    if images.rows != IMAGE_SIDE || images.cols != IMAGE_SIDE {
        return Err(DataError::Shape(format!(
            "expected {IMAGE_SIDE}x{IMAGE_SIDE} images, got {}x{}",
            images.rows, images.cols
        )));
    }
    let mut picks: Vec<(usize, usize, Split)> = Vec::new();
    for (pos, &class) in classes.iter().enumerate() {
        let mut idx: Vec<usize> = (0..images.len()).filter(|&i| images.labels[i] == class).collect();
        if idx.len() < n_train + n_test {
            return Err(DataError::Params(format!(
                "class {class} has {} images, need {}",
                idx.len(),
                n_train + n_test
            )));
        }
        idx.shuffle(&mut derived_rng(seed, &[u64::from(class)]));
        picks.extend(idx[..n_train].iter().map(|&i| (i, pos, Split::Train)));
        picks.extend(idx[n_train..n_train + n_test].iter().map(|&i| (i, pos, Split::Test)));
    }
    picks.sort_by_key(|&(_, _, s)| s == Split::Test);
    let features = picks
        .par_iter()
        .map(|&(i, _, _)| preprocess(images.image(i)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset {
        ids: picks.iter().map(|p| p.0).collect(),
        features,
        labels: picks.iter().map(|p| p.1 as f64).collect(),
        split: picks.iter().map(|p| p.2).collect(),
        planted: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    // fixture bytes written out by hand: 1 image of 2x3 pixels, label 7
    const ONE_IMAGE: [u8; 22] = [
        0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 3, 10, 20, 30, 40, 50, 255,
    ];
    const ONE_LABEL: [u8; 9] = [0, 0, 8, 1, 0, 0, 0, 1, 7];

    #[test]
    fn parses_hand_fixture() {
        let (count, rows, cols, px) = parse_idx_images(&ONE_IMAGE).unwrap();
        assert_eq!((count, rows, cols), (1, 2, 3));
        assert_eq!(px, vec![10, 20, 30, 40, 50, 255]);
        assert_eq!(parse_idx_labels(&ONE_LABEL).unwrap(), vec![7]);
    }

    #[test]
    fn idx_errors() {
        let mut bad = ONE_IMAGE;
        bad[3] = 1;
        let err = parse_idx_images(&bad).unwrap_err().to_string();
        assert!(err.contains("0x00000801"), "{err}");
        assert!(matches!(
            parse_idx_images(&ONE_IMAGE[..20]),
            Err(DataError::Truncated { offset: 16, .. })
        ));
        assert!(matches!(
            parse_idx_labels(&ONE_LABEL[..6]),
            Err(DataError::Truncated { offset: 4, .. })
        ));
        let empty = [0u8, 0, 8, 1, 0, 0, 0, 0];
        assert!(parse_idx_labels(&empty).unwrap().is_empty());
    }

    #[test]
    fn idx_round_trip_files() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let raw = RawImages {
            rows: 28,
            cols: 28,
            pixels: (0..3 * 784).map(|_| rng.gen()).collect(),
            labels: vec![4, 6, 4],
        };
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("img");
        let lp = dir.path().join("lab");
        write_idx_images(std::fs::File::create(&ip).unwrap(), &raw).unwrap();
        write_idx_labels(std::fs::File::create(&lp).unwrap(), &raw.labels).unwrap();
        assert_eq!(load_idx_images(&ip, &lp).unwrap(), raw);
        write_idx_labels(std::fs::File::create(&lp).unwrap(), &[1, 2]).unwrap();
        assert!(matches!(
            load_idx_images(&ip, &lp),
            Err(DataError::CountMismatch { images: 3, labels: 2 })
        ));
    }

    #[test]
    fn preprocess_examples() {
        assert_eq!(preprocess(&[0; 784]).unwrap(), vec![0.0; 16]);
        assert!(preprocess(&[128; 784]).unwrap().iter().all(|&v| (v - PI).abs() < 1e-15));
        let mut img = [0u8; 784];
        img[0] = 255;
        let f = preprocess(&img).unwrap();
        assert_eq!(f[0], 255.0 * TAU / 256.0);
        assert!(f[1..].iter().all(|&v| v == 0.0));
        assert!(preprocess(&[0; 783]).is_err());
    }

    #[test]
    fn preprocess_patch_layout() {
        // pixel (r, c) = (10, 22) lies in patch row 1, column 3
        let mut img = [0u8; 784];
        img[10 * 28 + 22] = 64;
        let f = preprocess(&img).unwrap();
        assert_eq!(f[7], 64.0 * TAU / 256.0);
        assert_eq!(f.iter().filter(|&&v| v > 0.0).count(), 1);
    }

    #[test]
    fn blobs_zero_variance_repeat() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = SynthParams { d: 9, spread: 0.0, ..Default::default() };
        let ds = synth_dataset(SynthKind::Blobs, &p, &mut rng).unwrap();
        let mut distinct: Vec<Vec<f64>> = ds.features.clone();
        distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
        distinct.dedup();
        assert_eq!(distinct.len(), 4);
        for class in [0.0, 1.0] {
            let mut rows: Vec<&Vec<f64>> = ds.features.iter().zip(&ds.labels).filter(|(_, &l)| l == class).map(|(x, _)| x).collect();
            rows.sort_by(|a, b| a.partial_cmp(b).unwrap());
            rows.dedup();
            assert_eq!(rows.len(), 2);
        }
    }

    #[test]
    fn synthetic_balance_range_determinism() {
        for kind in [SynthKind::Blobs, SynthKind::Parity, SynthKind::Linear] {
            for d in [1, 10, 101] {
                let p = SynthParams { d, ..Default::default() };
                let a = synth_dataset(kind, &p, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
                let b = synth_dataset(kind, &p, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
                assert_eq!(a, b);
                assert!(a.features.iter().flatten().all(|&v| (0.0..TAU).contains(&v)));
                if kind != SynthKind::Linear {
                    let ones = a.labels.iter().filter(|&&l| l == 1.0).count();
                    assert!((d - ones).abs_diff(ones) <= 1);
                }
            }
        }
    }

    #[test]
    fn parity_labels_match_rule() {
        let p = SynthParams { d: 50, bits: 3, ..Default::default() };
        let ds = synth_dataset(SynthKind::Parity, &p, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        for (x, &y) in ds.features.iter().zip(&ds.labels) {
            let parity = x[..3].iter().filter(|&&v| v >= PI).count() % 2;
            assert_eq!(parity as f64, y);
        }
    }

    #[test]
    fn linear_recovers_planted_weights() {
        let ds = synth_dataset(SynthKind::Linear, &SynthParams::default(), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let q = nalgebra::DMatrix::from_fn(ds.len(), ds.dim(), |i, j| ds.features[i][j]);
        let model = crate::head::fit_least_squares(&q, &ds.labels, &Default::default()).unwrap();
        let w = ds.planted.as_ref().unwrap();
        for j in 0..ds.dim() {
            assert!((model.alpha()[j] - w[j]).abs() < 1e-8);
        }
    }

    #[test]
    fn csv_round_trip() {
        let ds = synth_dataset(SynthKind::Linear, &SynthParams { d: 7, ..Default::default() }, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf, &["kind=linear".into()]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# kind=linear\nid,label,f0,f1,"));
        let back = Dataset::read_csv(&buf[..]).unwrap();
        assert_eq!(back.features, ds.features);
        assert_eq!(back.labels, ds.labels);
        assert!(Dataset::read_csv("id,label,f0\n0,x,1\n".as_bytes()).is_err());
    }

    #[test]
    fn per_class_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let labels: Vec<u8> = (0..60).map(|i| [4u8, 6, 1][i % 3]).collect();
        let raw = RawImages {
            rows: 28,
            cols: 28,
            pixels: (0..60 * 784).map(|_| rng.gen()).collect(),
            labels,
        };
        let ds = sample_per_class(&raw, &[4, 6], 5, 3, 11).unwrap();
        assert_eq!(ds.len(), 16);
        assert_eq!(ds.subset(Split::Train).len(), 10);
        assert_eq!(ds.subset(Split::Test).labels.iter().filter(|&&l| l == 1.0).count(), 3);
        for (&id, &l) in ds.ids.iter().zip(&ds.labels) {
            assert_eq!(raw.labels[id], [4, 6][l as usize]);
        }
        let mut ids = ds.ids.clone();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 16);
        assert_eq!(ds, sample_per_class(&raw, &[4, 6], 5, 3, 11).unwrap());
        assert!(sample_per_class(&raw, &[4, 6], 20, 3, 11).is_err());
    }
}
