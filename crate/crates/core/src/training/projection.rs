//! Fitting the input projection `W [E, H]` so that `Wᵀ v_in ≈ v_out` over
//! words present in both the pretrained and the trained embedding tables.
//!
//! The loss is `(1/N) Σ_i ‖Wᵀ x_i − y_i‖²`. It is quadratic in `W`, so the
//! optimiser works on the sufficient statistics `XᵀX/N`, `XᵀY/N` and
//! `Σ‖y‖²/N`, making each iteration independent of `N`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{normal, INIT_STD};

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionPair {
    pub v_in: Vec<f32>,
    pub v_out: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionOptions {
    pub lr: f64,
    pub momentum: f64,
    pub max_iters: usize,
    /// Stop once the loss falls below this value.
    pub tolerance: f64,
}

impl Default for ProjectionOptions {
    fn default() -> Self {
        Self {
            lr: 0.1,
            momentum: 0.9,
            max_iters: 2_000,
            tolerance: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProjectionFit {
    /// Row-major `[in_dim, out_dim]`.
    pub weight: Vec<f32>,
    pub in_dim: usize,
    pub out_dim: usize,
    /// Loss before each iteration, then the final loss.
    pub losses: Vec<f64>,
}

impl ProjectionFit {
    pub fn final_loss(&self) -> f64 {
        *self.losses.last().expect("at least one loss")
    }

    pub fn apply(&self, v_in: &[f32]) -> Vec<f32> {
        project(&self.weight, self.in_dim, self.out_dim, v_in)
    }
}

fn project(w: &[f32], e: usize, h: usize, x: &[f32]) -> Vec<f32> {
    let mut out = vec![0.0f64; h];
    for (i, &xi) in x.iter().enumerate() {
        for (o, &wv) in out.iter_mut().zip(&w[i * h..(i + 1) * h]) {
            *o += xi as f64 * wv as f64;
        }
    }
    debug_assert_eq!(x.len(), e);
    out.into_iter().map(|v| v as f32).collect()
}

fn dims(pairs: &[ProjectionPair]) -> Result<(usize, usize)> {
    let first = pairs
        .first()
        .ok_or_else(|| Error::contract("projection pretraining needs at least one pair"))?;
    let (e, h) = (first.v_in.len(), first.v_out.len());
    if e == 0 || h == 0 {
        return Err(Error::contract("projection vectors must be nonempty"));
    }
    for p in pairs {
        if p.v_in.len() != e || p.v_out.len() != h {
            return Err(Error::shape("projection_pair", &[p.v_in.len(), p.v_out.len()], &[e, h]));
        }
    }
    Ok((e, h))
}

/// Mean squared projection error of `weight` (row-major `[E, H]`).
pub fn projection_loss(weight: &[f32], pairs: &[ProjectionPair]) -> Result<f64> {
    let (e, h) = dims(pairs)?;
    if weight.len() != e * h {
        return Err(Error::shape("projection_loss", &[weight.len()], &[e, h]));
    }
    let total: f64 = pairs
        .par_iter()
        .map(|p| {
            project(weight, e, h, &p.v_in)
                .iter()
                .zip(&p.v_out)
                .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
                .sum::<f64>()
        })
        .sum();
    Ok(total / pairs.len() as f64)
}

struct Moments {
    gram: Vec<f64>,
    cross: Vec<f64>,
    target_sq: f64,
}

fn moments(pairs: &[ProjectionPair], e: usize, h: usize) -> Moments {
    let n = pairs.len() as f64;
    let zero = || Moments {
        gram: vec![0.0; e * e],
        cross: vec![0.0; e * h],
        target_sq: 0.0,
    };
    let mut m = pairs
        .par_chunks(64)
        .fold(zero, |mut acc, chunk| {
            for p in chunk {
                for (i, &xi) in p.v_in.iter().enumerate() {
                    let xi = xi as f64;
                    for (g, &xj) in acc.gram[i * e..(i + 1) * e].iter_mut().zip(&p.v_in) {
                        *g += xi * xj as f64;
                    }
                    for (c, &y) in acc.cross[i * h..(i + 1) * h].iter_mut().zip(&p.v_out) {
                        *c += xi * y as f64;
                    }
                }
                acc.target_sq += p.v_out.iter().map(|&y| y as f64 * y as f64).sum::<f64>();
            }
            acc
        })
        .reduce(zero, |mut a, b| {
            a.gram.iter_mut().zip(&b.gram).for_each(|(x, y)| *x += y);
            a.cross.iter_mut().zip(&b.cross).for_each(|(x, y)| *x += y);
            a.target_sq += b.target_sq;
            a
        });
    m.gram.iter_mut().for_each(|v| *v /= n);
    m.cross.iter_mut().for_each(|v| *v /= n);
    m.target_sq /= n;
    m
}

/// `G·W` for symmetric `G [E, E]` and `W [E, H]`.
fn gram_times(gram: &[f64], w: &[f64], e: usize, h: usize) -> Vec<f64> {
    let mut out = vec![0.0; e * h];
    out.par_chunks_mut(h).enumerate().for_each(|(i, row)| {
        for (k, &g) in gram[i * e..(i + 1) * e].iter().enumerate() {
            if g != 0.0 {
                for (o, &wv) in row.iter_mut().zip(&w[k * h..(k + 1) * h]) {
                    *o += g * wv;
                }
            }
        }
    });
    out
}

/// Gradient descent (heavy-ball momentum when `momentum > 0`) on the mean
/// squared projection error, from a small random start.
pub fn pretrain_projection<R: Rng + ?Sized>(
    pairs: &[ProjectionPair],
    options: &ProjectionOptions,
    rng: &mut R,
) -> Result<ProjectionFit> {
    let (e, h) = dims(pairs)?;
    if !(options.lr > 0.0) || !(0.0..1.0).contains(&options.momentum) {
        return Err(Error::contract("projection lr must be positive and momentum in [0, 1)"));
    }
    let m = moments(pairs, e, h);
    let init = normal(rng, e * h, INIT_STD);
    let mut w: Vec<f64> = init.into_iter().map(f64::from).collect();
    let mut velocity = vec![0.0f64; e * h];
    let mut losses = Vec::with_capacity(options.max_iters + 1);
    for iter in 0..=options.max_iters {
        let gw = gram_times(&m.gram, &w, e, h);
        let quad: f64 = gw.iter().zip(&w).map(|(a, b)| a * b).sum();
        let lin: f64 = m.cross.iter().zip(&w).map(|(a, b)| a * b).sum();
        let loss = (quad - 2.0 * lin + m.target_sq).max(0.0);
        losses.push(loss);
        if iter == options.max_iters || loss <= options.tolerance {
            break;
        }
        for ((v, wv), (g, c)) in velocity.iter_mut().zip(w.iter_mut()).zip(gw.iter().zip(&m.cross)) {
            *v = options.momentum * *v - options.lr * 2.0 * (g - c);
            *wv += *v;
        }
    }
    let weight: Vec<f32> = w.into_iter().map(|v| v as f32).collect();
    // The tracked loss uses f64 weights; report the loss of what is returned.
    if let Some(last) = losses.last_mut() {
        *last = projection_loss(&weight, pairs)?;
    }
    Ok(ProjectionFit {
        weight,
        in_dim: e,
        out_dim: h,
        losses,
    })
}

/// Word vectors in the common text layout: `word v1 v2 …` per line, with an
/// optional leading `count dim` line.
#[derive(Debug, Clone, PartialEq)]
pub struct WordVectors {
    pub words: Vec<String>,
    /// Row-major `[words.len(), dim]`.
    pub data: Vec<f32>,
    pub dim: usize,
}

impl WordVectors {
    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut out = Self {
            words: Vec::new(),
            data: Vec::new(),
            dim: 0,
        };
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let mut parts = line.split_whitespace();
            let Some(word) = parts.next() else { continue };
            let values: Vec<&str> = parts.collect();
            if i == 0 && values.len() == 1 && word.parse::<usize>().is_ok() && values[0].parse::<usize>().is_ok() {
                continue;
            }
            let row = values
                .iter()
                .map(|v| v.parse::<f32>())
                .collect::<std::result::Result<Vec<f32>, _>>()
                .map_err(|e| Error::format(path, i + 1, format!("bad vector value ({e})")))?;
            if out.dim == 0 {
                out.dim = row.len();
            }
            if row.is_empty() || row.len() != out.dim {
                return Err(Error::format(
                    path,
                    i + 1,
                    format!("expected {} values, found {}", out.dim, row.len()),
                ));
            }
            out.words.push(word.to_owned());
            out.data.extend(row);
        }
        if out.words.is_empty() {
            return Err(Error::format(path, 0, "no vectors"));
        }
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let write = || -> std::io::Result<()> {
            let mut w = BufWriter::new(File::create(path)?);
            for (word, row) in self.words.iter().zip(self.data.chunks(self.dim)) {
                write!(w, "{word}")?;
                for v in row {
                    write!(w, " {v}")?;
                }
                writeln!(w)?;
            }
            w.flush()
        };
        write().map_err(|e| Error::io(path, e))
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn index(&self) -> HashMap<&str, usize> {
        self.words.iter().enumerate().map(|(i, w)| (w.as_str(), i)).collect()
    }
}

/// Pairs for every word present in both tables, in `targets` order.
pub fn overlap_pairs(pretrained: &WordVectors, targets: &WordVectors) -> Vec<ProjectionPair> {
    let index = pretrained.index();
    targets
        .words
        .iter()
        .enumerate()
        .filter_map(|(j, w)| {
            index.get(w.as_str()).map(|&i| ProjectionPair {
                v_in: pretrained.row(i).to_vec(),
                v_out: targets.row(j).to_vec(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn single_basis_pair_is_fit_exactly() {
        let mut v_in = vec![0.0; 4];
        v_in[0] = 1.0;
        let v_out = vec![0.5, -1.0, 2.0];
        let pairs = vec![ProjectionPair { v_in, v_out: v_out.clone() }];
        let fit = pretrain_projection(&pairs, &ProjectionOptions::default(), &mut rng::stream(0, "p", 0)).unwrap();
        assert!(fit.final_loss() < 1e-9, "{}", fit.final_loss());
        assert_eq!(&fit.weight[..3], &v_out[..]);
    }

    #[test]
    fn plain_descent_is_monotone() {
        let mut r = rng::stream(1, "p", 0);
        let pairs: Vec<ProjectionPair> = (0..20)
            .map(|_| ProjectionPair {
                v_in: (0..5).map(|_| r.random::<f32>() - 0.5).collect(),
                v_out: (0..3).map(|_| r.random::<f32>() - 0.5).collect(),
            })
            .collect();
        let opts = ProjectionOptions {
            lr: 0.05,
            momentum: 0.0,
            max_iters: 200,
            tolerance: 0.0,
        };
        let fit = pretrain_projection(&pairs, &opts, &mut r).unwrap();
        let l = &fit.losses[..fit.losses.len() - 1];
        assert!(l.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        let direct = projection_loss(&fit.weight, &pairs).unwrap();
        assert!((direct - fit.final_loss()).abs() < 1e-12);
    }

    #[test]
    fn vector_file_round_trip_and_overlap() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.txt");
        std::fs::write(&path, "3 2\nthe 1 2\ncat 0.5 -1\ndog 3 4\n").unwrap();
        let v = WordVectors::read(&path).unwrap();
        assert_eq!(v.words, ["the", "cat", "dog"]);
        assert_eq!(v.row(1), [0.5, -1.0]);
        let out = dir.path().join("w.txt");
        v.write(&out).unwrap();
        assert_eq!(WordVectors::read(&out).unwrap(), v);
        let other = WordVectors {
            words: vec!["dog".into(), "emu".into()],
            data: vec![9.0, 8.0, 7.0, 6.0],
            dim: 2,
        };
        let pairs = overlap_pairs(&v, &other);
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].v_in, vec![3.0, 4.0]);
        std::fs::write(&path, "a 1 2\nb 1\n").unwrap();
        assert!(matches!(WordVectors::read(&path), Err(Error::Format { line: 2, .. })));
    }

    #[test]
    fn rejects_ragged_pairs() {
        let pairs = vec![
            ProjectionPair { v_in: vec![1.0, 0.0], v_out: vec![1.0] },
            ProjectionPair { v_in: vec![1.0], v_out: vec![1.0] },
        ];
        assert!(matches!(
            pretrain_projection(&pairs, &ProjectionOptions::default(), &mut rng::stream(0, "p", 0)),
            Err(Error::Shape { .. })
        ));
    }
}
