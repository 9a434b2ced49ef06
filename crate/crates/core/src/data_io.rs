//! Labeled datasets, IDX (MNIST) files and synthetic generators.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt, WriteBytesExt};
use flate2::read::GzDecoder;
use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::model_io::read_exact_len;
use crate::rng;
use crate::scalar::Scalar;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Labeled samples, one per row of `inputs`, every row in the unit l_inf ball.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    inputs: Array2<T>,
    labels: Vec<usize>,
    class_count: usize,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(inputs: Array2<T>, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        Error::check_dim("dataset labels", inputs.nrows(), labels.len())?;
        if inputs.ncols() == 0 {
            return Err(Error::domain("dataset inputs need at least one feature"));
        }
        if let Some(i) = labels.iter().position(|&y| y >= class_count) {
            return Err(Error::domain(format!(
                "sample {i} has label {} outside [0, {class_count})",
                labels[i]
            )));
        }
        for (i, row) in inputs.axis_iter(Axis(0)).enumerate() {
            if let Some(v) = row.iter().find(|v| !v.is_finite() || v.abs() > T::one()) {
                return Err(Error::domain(format!(
                    "sample {i} leaves the unit l_inf ball (entry {v})"
                )));
            }
        }
        Ok(Dataset {
            inputs,
            labels,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn inputs(&self) -> ArrayView2<'_, T> {
        self.inputs.view()
    }

    pub fn input(&self, i: usize) -> ArrayView1<'_, T> {
        self.inputs.row(i)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sample(&self, i: usize) -> (Vector<T>, usize) {
        (Vector::from_vec_unchecked(self.inputs.row(i).to_vec()), self.labels[i])
    }

    /// Rows `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Dataset<T> {
        Dataset {
            inputs: self.inputs.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
        }
    }

    /// The first `n` samples (all of them if `n` exceeds the size).
    pub fn head(&self, n: usize) -> Dataset<T> {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.select(&idx)
    }

    pub fn cast<U: Scalar>(&self) -> Dataset<U> {
        Dataset {
            inputs: self.inputs.mapv(|v| U::of(v.as_f64())),
            labels: self.labels.clone(),
            class_count: self.class_count,
        }
    }
}

/// Raw images and labels as stored in a pair of IDX files.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    /// `count * rows * cols` pixels, image after image, row-major.
    pub pixels: Vec<u8>,
    pub labels: Vec<u8>,
}

impl IdxImages {
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

fn open_maybe_gzip(path: &Path) -> Result<Box<dyn Read>> {
    let mut file = BufReader::new(File::open(path)?);
    let mut head = [0u8; 2];
    let n = read_up_to(&mut file, &mut head)?;
    let prefix = io::Cursor::new(head[..n].to_vec());
    let stream = prefix.chain(file);
    Ok(if n == 2 && head == [0x1f, 0x8b] {
        Box::new(BufReader::new(GzDecoder::new(stream)))
    } else {
        Box::new(stream)
    })
}

fn read_up_to(r: &mut impl Read, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..])? {
            0 => break,
            k => filled += k,
        }
    }
    Ok(filled)
}

fn eof_as_parse(field: &'static str) -> impl Fn(io::Error) -> Error {
    move |e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            Error::parse(field, "file is truncated")
        } else {
            Error::Io(e)
        }
    }
}

fn read_header(r: &mut impl Read, magic: u32, field: &'static str, dims: usize) -> Result<Vec<usize>> {
    let found = r.read_u32::<BigEndian>().map_err(eof_as_parse(field))?;
    if found != magic {
        return Err(Error::parse(
            field,
            format!("expected magic 0x{magic:08x}, found 0x{found:08x}"),
        ));
    }
    (0..dims)
        .map(|_| Ok(r.read_u32::<BigEndian>().map_err(eof_as_parse(field))? as usize))
        .collect()
}

/// Parses an IDX image file (magic 0x803) and label file (magic 0x801).
/// Either may be gzip-compressed.
pub fn read_idx(mut images: impl Read, mut labels: impl Read) -> Result<IdxImages> {
    let dims = read_header(&mut images, IDX_IMAGES_MAGIC, "images magic", 3)?;
    let (count, rows, cols) = (dims[0], dims[1], dims[2]);
    let label_count = read_header(&mut labels, IDX_LABELS_MAGIC, "labels magic", 1)?[0];
    if count != label_count {
        return Err(Error::parse(
            "labels count",
            format!("{count} images but {label_count} labels"),
        ));
    }
    let size = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| Error::parse("images count", "image block size overflows"))?;
    let pixels = read_exact_len(&mut images, size, "images data")?;
    let label_bytes = read_exact_len(&mut labels, count, "labels data")?;
    Ok(IdxImages {
        rows,
        cols,
        pixels,
        labels: label_bytes,
    })
}

pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<IdxImages> {
    read_idx(
        open_maybe_gzip(images_path.as_ref())?,
        open_maybe_gzip(labels_path.as_ref())?,
    )
}

/// Writes uncompressed IDX files.
pub fn write_idx(data: &IdxImages, mut images: impl Write, mut labels: impl Write) -> Result<()> {
    let to_u32 = |n: usize| {
        u32::try_from(n).map_err(|_| Error::domain(format!("{n} does not fit an IDX dimension")))
    };
    images.write_u32::<BigEndian>(IDX_IMAGES_MAGIC)?;
    for d in [data.len(), data.rows, data.cols] {
        images.write_u32::<BigEndian>(to_u32(d)?)?;
    }
    images.write_all(&data.pixels)?;
    labels.write_u32::<BigEndian>(IDX_LABELS_MAGIC)?;
    labels.write_u32::<BigEndian>(to_u32(data.len())?)?;
    labels.write_all(&data.labels)?;
    images.flush()?;
    labels.flush()?;
    Ok(())
}

pub fn save_idx(data: &IdxImages, images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<()> {
    write_idx(
        data,
        BufWriter::new(File::create(images_path)?),
        BufWriter::new(File::create(labels_path)?),
    )
}

pub const MNIST_SIDE: usize = 28;
pub const PADDED_SIDE: usize = 32;

/// Centers each 28x28 image in a zero 32x32 canvas, scales pixels by 1/255
/// and flattens to 1024 features. Labels must be digits.
pub fn preprocess_mnist(raw: &IdxImages) -> Result<Dataset<f64>> {
    if raw.rows != MNIST_SIDE || raw.cols != MNIST_SIDE {
        return Err(Error::parse(
            "images rows",
            format!("expected 28x28 images, found {}x{}", raw.rows, raw.cols),
        ));
    }
    let pad = (PADDED_SIDE - MNIST_SIDE) / 2;
    let mut inputs = Array2::<f64>::zeros((raw.len(), PADDED_SIDE * PADDED_SIDE));
    for (i, mut row) in inputs.axis_iter_mut(Axis(0)).enumerate() {
        let img = raw.image(i);
        for r in 0..MNIST_SIDE {
            for c in 0..MNIST_SIDE {
                row[(r + pad) * PADDED_SIDE + c + pad] = f64::from(img[r * MNIST_SIDE + c]) / 255.0;
            }
        }
    }
    let labels = raw.labels.iter().map(|&y| usize::from(y)).collect();
    Dataset::new(inputs, labels, 10).map_err(|e| match e {
        Error::Domain(msg) => Error::parse("labels data", msg),
        other => other,
    })
}

/// 28x28 images go through `preprocess_mnist`; other shapes are flattened
/// and scaled by 1/255 as they are, with one class per label value seen
/// (at least two).
pub fn prepare_idx(raw: &IdxImages) -> Result<Dataset<f64>> {
    if raw.rows == MNIST_SIDE && raw.cols == MNIST_SIDE {
        return preprocess_mnist(raw);
    }
    let n = raw.rows * raw.cols;
    let inputs = Array2::from_shape_vec(
        (raw.len(), n),
        raw.pixels.iter().map(|&p| f64::from(p) / 255.0).collect(),
    )
    .map_err(|e| Error::parse("images data", e.to_string()))?;
    let classes = raw.labels.iter().map(|&y| usize::from(y) + 1).max().unwrap_or(0).max(2);
    Dataset::new(inputs, raw.labels.iter().map(|&y| usize::from(y)).collect(), classes)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SyntheticKind {
    /// Binary data `x ~ U[-1, 1]^n` labelled by the sign of `<w*, x>`, keeping
    /// only points with `|<w*, x>| >= margin`. `w*` has `support` nonzeros
    /// and unit l1 norm. Class 1 is the positive side.
    PlantedLinear { margin: f64, support: usize },
    /// `classes` Gaussian blobs with centers in `[-0.5, 0.5]^n`, clipped to the ball.
    GaussianClusters { classes: usize, spread: f64 },
}

/// A generated dataset, with the planting weights for the linear kind.
#[derive(Clone, Debug)]
pub struct Synthetic {
    pub dataset: Dataset<f64>,
    pub planted: Option<Vector<f64>>,
}

const MAX_REJECTIONS: usize = 1_000_000;

pub fn synthetic_dataset(kind: SyntheticKind, n: usize, m: usize, seed: u64) -> Result<Synthetic> {
    if n == 0 || m == 0 {
        return Err(Error::domain("synthetic data needs n >= 1 and m >= 1"));
    }
    let mut r = rng::seeded(seed);
    match kind {
        SyntheticKind::PlantedLinear { margin, support } => {
            if !(margin >= 0.0) || support == 0 || support > n {
                return Err(Error::domain(format!(
                    "planted data needs margin >= 0 and support in [1, {n}]"
                )));
            }
            let mut coords: Vec<usize> = (0..n).collect();
            coords.shuffle(&mut r);
            let mut w = vec![0.0f64; n];
            for &j in &coords[..support] {
                w[j] = if r.random::<bool>() { 1.0 } else { -1.0 } * r.random_range(0.5..1.0);
            }
            let total: f64 = w.iter().map(|v| v.abs()).sum();
            w.iter_mut().for_each(|v| *v /= total);
            let mut inputs = Array2::zeros((m, n));
            let mut labels = Vec::with_capacity(m);
            let mut rejected = 0;
            while labels.len() < m {
                let x: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..=1.0)).collect();
                let score: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum();
                if score.abs() < margin || score == 0.0 {
                    rejected += 1;
                    if rejected > MAX_REJECTIONS {
                        return Err(Error::domain(format!(
                            "margin {margin} is too large for support {support}"
                        )));
                    }
                    continue;
                }
                inputs.row_mut(labels.len()).assign(&ArrayView1::from(&x));
                labels.push(usize::from(score > 0.0));
            }
            Ok(Synthetic {
                dataset: Dataset::new(inputs, labels, 2)?,
                planted: Some(Vector::new(w)?),
            })
        }
        SyntheticKind::GaussianClusters { classes, spread } => {
            if classes < 2 || !(spread >= 0.0) {
                return Err(Error::domain("clusters need >= 2 classes and spread >= 0"));
            }
            let noise = Normal::new(0.0, spread).map_err(|e| Error::domain(e.to_string()))?;
            let centers: Vec<Vec<f64>> = (0..classes)
                .map(|_| (0..n).map(|_| r.random_range(-0.5..=0.5)).collect())
                .collect();
            let mut inputs = Array2::zeros((m, n));
            let mut labels = Vec::with_capacity(m);
            for i in 0..m {
                let y = r.random_range(0..classes);
                for (dst, &c) in inputs.row_mut(i).iter_mut().zip(&centers[y]) {
                    *dst = (c + noise.sample(&mut r)).clamp(-1.0, 1.0);
                }
                labels.push(y);
            }
            Ok(Synthetic {
                dataset: Dataset::new(inputs, labels, classes)?,
                planted: None,
            })
        }
    }
}
