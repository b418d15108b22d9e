//! Datasets: IDX image/label files and two synthetic generators.
//!
//! Every matrix holds one example per column. Classification targets are
//! one-hot columns.

use std::path::Path;

use crate::error::{Error, Result};
use crate::harness::config::{DataSource, DatasetSpec};
use crate::net::{Activation, Network};
use crate::rng::RngStream;
use crate::tensor::Matrix;

const IDX_UBYTE: u8 = 0x08;

/// Inputs and targets for one split.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub inputs: Matrix,
    pub targets: Matrix,
    /// Class index per example; empty for regression.
    pub labels: Vec<usize>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.inputs.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, indices: &[usize]) -> Result<Split> {
        Ok(Split {
            inputs: self.inputs.select_columns(indices)?,
            targets: self.targets.select_columns(indices)?,
            labels: if self.labels.is_empty() {
                Vec::new()
            } else {
                indices.iter().map(|&i| self.labels[i]).collect()
            },
        })
    }

    /// The first `n` examples (all of them if `n >= len`).
    pub fn head(&self, n: usize) -> Result<Split> {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.select(&idx)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Split,
    pub test: Split,
    pub classification: bool,
}

/// Raw IDX unsigned-byte tensor: dimensions and values.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxTensor {
    pub dims: Vec<usize>,
    pub values: Vec<u8>,
}

/// Parses an unsigned-byte IDX buffer. Errors carry the byte offset of the
/// problem.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxTensor> {
    if bytes.len() < 4 {
        return Err(Error::Format {
            offset: bytes.len(),
            message: "truncated magic number".into(),
        });
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad magic prefix {:02x}{:02x}", bytes[0], bytes[1]),
        });
    }
    if bytes[2] != IDX_UBYTE {
        return Err(Error::Format {
            offset: 2,
            message: format!(
                "unsupported element type 0x{:02x} (only unsigned byte)",
                bytes[2]
            ),
        });
    }
    let ndims = bytes[3] as usize;
    if ndims == 0 {
        return Err(Error::Format {
            offset: 3,
            message: "zero dimensions".into(),
        });
    }
    let mut dims = Vec::with_capacity(ndims);
    for d in 0..ndims {
        let at = 4 + 4 * d;
        let word = bytes.get(at..at + 4).ok_or_else(|| Error::Format {
            offset: bytes.len(),
            message: format!("truncated header reading dimension {d}"),
        })?;
        dims.push(u32::from_be_bytes([word[0], word[1], word[2], word[3]]) as usize);
    }
    let header = 4 + 4 * ndims;
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format {
            offset: 4,
            message: "dimension product overflows".into(),
        })?;
    let body = &bytes[header..];
    if body.len() < count {
        return Err(Error::Format {
            offset: bytes.len(),
            message: format!(
                "expected {count} data bytes after header, found {}",
                body.len()
            ),
        });
    }
    if body.len() > count {
        return Err(Error::Format {
            offset: header + count,
            message: format!("{} trailing bytes", body.len() - count),
        });
    }
    Ok(IdxTensor {
        dims,
        values: body.to_vec(),
    })
}

fn read_idx(path: &Path) -> Result<IdxTensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx(&bytes).map_err(|e| match e {
        Error::Format { offset, message } => Error::Format {
            offset,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

/// Images scaled to `[0, 1]`, flattened to one column per image, with
/// one-hot targets over `n_classes`.
///
/// Images must be 3-dimensional (magic `0x00000803`) and labels
/// 1-dimensional (magic `0x00000801`). Byte offsets in errors refer to the
/// image file for dimension problems and to the label file for labels.
pub fn idx_to_split(images: &IdxTensor, labels: &IdxTensor, n_classes: usize) -> Result<Split> {
    if images.dims.len() != 3 {
        return Err(Error::Format {
            offset: 3,
            message: format!(
                "image file must have magic 0x00000803, found {} dimensions",
                images.dims.len()
            ),
        });
    }
    if labels.dims.len() != 1 {
        return Err(Error::Format {
            offset: 3,
            message: format!(
                "label file must have magic 0x00000801, found {} dimensions",
                labels.dims.len()
            ),
        });
    }
    let n = images.dims[0];
    if labels.dims[0] != n {
        return Err(Error::Format {
            offset: 4,
            message: format!("{n} images but {} labels", labels.dims[0]),
        });
    }
    let dim: usize = images.dims[1..].iter().product();
    if n == 0 || dim == 0 || n_classes == 0 {
        return Err(Error::Format {
            offset: 4,
            message: "IDX files contain no data".into(),
        });
    }
    let mut inputs = Matrix::zeros(dim, n);
    let mut targets = Matrix::zeros(n_classes, n);
    let mut out_labels = Vec::with_capacity(n);
    for j in 0..n {
        for i in 0..dim {
            inputs.set(i, j, images.values[j * dim + i] as f64 / 255.0);
        }
        let label = labels.values[j] as usize;
        if label >= n_classes {
            return Err(Error::Format {
                offset: 8 + j,
                message: format!("label {label} out of range for {n_classes} classes"),
            });
        }
        targets.set(label, j, 1.0);
        out_labels.push(label);
    }
    Ok(Split {
        inputs,
        targets,
        labels: out_labels,
    })
}

/// Loads an image/label IDX pair.
pub fn load_idx(images: &Path, labels: &Path, n_classes: usize) -> Result<Split> {
    idx_to_split(&read_idx(images)?, &read_idx(labels)?, n_classes)
}

/// Gaussian inputs with targets produced by `teacher`.
pub fn teacher_split(
    teacher: &Network,
    n: usize,
    input_std: f64,
    rng: &mut RngStream,
) -> Result<Split> {
    let inputs = Matrix::gaussian(teacher.widths()[0], n, 0.0, input_std, rng)?;
    let targets = teacher.predict(&inputs)?;
    Ok(Split {
        inputs,
        targets,
        labels: Vec::new(),
    })
}

fn blob_split(centers: &Matrix, n: usize, cluster_std: f64, rng: &mut RngStream) -> Result<Split> {
    let (dim, classes) = centers.shape();
    let mut inputs = Matrix::zeros(dim, n);
    let mut targets = Matrix::zeros(classes, n);
    let mut labels = Vec::with_capacity(n);
    for j in 0..n {
        let c = rng.below(classes);
        for i in 0..dim {
            inputs.set(
                i,
                j,
                centers.get(i, c) + cluster_std * rng.standard_normal(),
            );
        }
        targets.set(c, j, 1.0);
        labels.push(c);
    }
    Ok(Split {
        inputs,
        targets,
        labels,
    })
}

/// Synthetic data drawn from `rng` for a network with the given widths.
///
/// Teacher mode: inputs `N(0, input_std²)`, targets from a random network
/// (hidden activation `teacher_activation`, linear output).
/// Blob mode: one class per output unit; class centers are Gaussian with
/// norm about `separation·cluster_std/√2`, so pairs of centers sit about
/// `separation` cluster widths apart.
pub fn make_synthetic(
    spec: &DatasetSpec,
    widths: &[usize],
    rng: &mut RngStream,
) -> Result<Dataset> {
    let (n_in, n_out) = match (widths.first(), widths.last()) {
        (Some(&a), Some(&b)) if widths.len() >= 2 => (a, b),
        _ => {
            return Err(Error::Config(format!(
                "need at least two widths, got {widths:?}"
            )))
        }
    };
    match &spec.source {
        DataSource::Teacher {
            input_std,
            teacher_widths,
            teacher_activation,
        } => {
            let tw = teacher_widths.clone().unwrap_or_else(|| widths.to_vec());
            let teacher = Network::new(&tw, *teacher_activation, Activation::Linear, rng)?;
            Ok(Dataset {
                train: teacher_split(&teacher, spec.train_size, *input_std, rng)?,
                test: teacher_split(&teacher, spec.test_size, *input_std, rng)?,
                classification: false,
            })
        }
        DataSource::Blobs {
            separation,
            cluster_std,
        } => {
            let radius = separation * cluster_std / std::f64::consts::SQRT_2;
            let centers = Matrix::gaussian(n_in, n_out, 0.0, radius / (n_in as f64).sqrt(), rng)?;
            Ok(Dataset {
                train: blob_split(&centers, spec.train_size, *cluster_std, rng)?,
                test: blob_split(&centers, spec.test_size, *cluster_std, rng)?,
                classification: true,
            })
        }
        DataSource::Idx { .. } => Err(Error::Config(
            "IDX data is loaded from files, not generated".into(),
        )),
    }
}

/// Builds the dataset described by `spec`, drawing synthetic data or
/// shuffled train/test splits from `rng`, then normalizes if requested.
pub fn load_dataset(spec: &DatasetSpec, widths: &[usize], rng: &mut RngStream) -> Result<Dataset> {
    let mut data = match &spec.source {
        DataSource::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
        } => {
            let classes = *widths
                .last()
                .ok_or_else(|| Error::Config("empty widths".into()))?;
            let full = load_idx(train_images, train_labels, classes)?;
            let (train, test) = match (test_images, test_labels) {
                (Some(ti), Some(tl)) => (full, load_idx(ti, tl, classes)?),
                (None, None) => {
                    let mut order: Vec<usize> = (0..full.len()).collect();
                    rng.shuffle(&mut order);
                    let n_test = if spec.test_size > 0 {
                        spec.test_size
                    } else {
                        full.len() / 6
                    };
                    if n_test == 0 || n_test >= full.len() {
                        return Err(Error::Config(format!(
                            "cannot hold out {n_test} of {} examples for testing",
                            full.len()
                        )));
                    }
                    let (test_idx, train_idx) = order.split_at(n_test);
                    (full.select(train_idx)?, full.select(test_idx)?)
                }
                _ => {
                    return Err(Error::Config(
                        "give both test_images and test_labels, or neither".into(),
                    ))
                }
            };
            let train = if spec.train_size > 0 {
                train.head(spec.train_size)?
            } else {
                train
            };
            let test = if spec.test_size > 0 {
                test.head(spec.test_size)?
            } else {
                test
            };
            Dataset {
                train,
                test,
                classification: true,
            }
        }
        _ => make_synthetic(spec, widths, rng)?,
    };
    if data.train.inputs.rows() != widths[0] {
        return Err(Error::Config(format!(
            "data has {} input dimensions but widths start with {}",
            data.train.inputs.rows(),
            widths[0]
        )));
    }
    if spec.normalize {
        normalize(&mut data)?;
    }
    Ok(data)
}

/// Standardizes each input row with the training split's mean and std
/// (rows with zero variance are only centered).
pub fn normalize(data: &mut Dataset) -> Result<()> {
    let x = &data.train.inputs;
    let mean = x.row_means();
    let centered = x.center_rows();
    let var = centered.hadamard(&centered)?.row_means();
    let scale: Vec<f64> = var
        .data()
        .iter()
        .map(|&v| if v > 0.0 { 1.0 / v.sqrt() } else { 1.0 })
        .collect();
    for split in [&mut data.train, &mut data.test] {
        let (rows, cols) = split.inputs.shape();
        for i in 0..rows {
            for j in 0..cols {
                let v = (split.inputs.get(i, j) - mean.get(i, 0)) * scale[i];
                split.inputs.set(i, j, v);
            }
        }
    }
    Ok(())
}
