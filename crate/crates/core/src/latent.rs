//! 2-D views of the latent space.
//!
//! Representations are mean-centered and projected onto the two leading
//! principal axes. Each axis is signed so that its largest-magnitude
//! coefficient is positive, which makes the output reproducible.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Projected samples and the variance along each of the two axes.
#[derive(Clone, Debug)]
pub struct Projection {
    /// `[N × 2]`.
    pub points: Tensor,
    pub explained_variance: [f64; 2],
}

/// PCA projection of the rows of `data` to two dimensions.
pub fn pca_2d(data: &Tensor) -> Result<Projection> {
    if data.ndim() != 2 {
        return Err(Error::Shape {
            op: "pca",
            lhs: vec![0, 0],
            rhs: data.shape().to_vec(),
        });
    }
    let (n, l) = (data.rows(), data.cols());
    if n < 2 {
        return Err(Error::contract(format!(
            "PCA needs at least 2 samples, got {n}"
        )));
    }
    let x = DMatrix::from_row_slice(n, l, data.data());
    let mean = x.row_mean();
    let centered = DMatrix::from_fn(n, l, |i, j| x[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..l).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });

    let mut points = vec![0.0; n * 2];
    let mut explained = [0.0; 2];
    for (axis, &k) in order.iter().take(2).enumerate() {
        let mut v = eig.eigenvectors.column(k).into_owned();
        let lead = v
            .iter()
            .copied()
            .fold(0.0f64, |m, c| if c.abs() > m.abs() { c } else { m });
        if lead < 0.0 {
            v = -v;
        }
        let proj = &centered * v;
        for i in 0..n {
            points[i * 2 + axis] = proj[i];
        }
        explained[axis] = eig.eigenvalues[k].max(0.0);
    }
    Ok(Projection {
        points: Tensor::matrix(n, 2, points)?,
        explained_variance: explained,
    })
}

/// `x,y,cluster` rows with a header.
pub fn scatter_csv(points: &Tensor, labels: &[usize]) -> Result<String> {
    check_labels(points, labels)?;
    let mut s = String::from("x,y,cluster\n");
    for (i, l) in labels.iter().enumerate() {
        writeln!(s, "{},{},{}", points.at(i, 0), points.at(i, 1), l).expect("write to String");
    }
    Ok(s)
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

/// A self-contained SVG scatter plot colored by cluster.
pub fn scatter_svg(points: &Tensor, labels: &[usize]) -> Result<String> {
    check_labels(points, labels)?;
    const SIZE: f64 = 480.0;
    const PAD: f64 = 24.0;
    let n = labels.len();
    let (mut x0, mut x1, mut y0, mut y1) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for i in 0..n {
        x0 = x0.min(points.at(i, 0));
        x1 = x1.max(points.at(i, 0));
        y0 = y0.min(points.at(i, 1));
        y1 = y1.max(points.at(i, 1));
    }
    let sx = if x1 > x0 {
        (SIZE - 2.0 * PAD) / (x1 - x0)
    } else {
        0.0
    };
    let sy = if y1 > y0 {
        (SIZE - 2.0 * PAD) / (y1 - y0)
    } else {
        0.0
    };
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    )
    .expect("write to String");
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).expect("write to String");
    for (i, &l) in labels.iter().enumerate() {
        let cx = if sx > 0.0 {
            PAD + (points.at(i, 0) - x0) * sx
        } else {
            SIZE / 2.0
        };
        // SVG y grows downwards
        let cy = if sy > 0.0 {
            SIZE - PAD - (points.at(i, 1) - y0) * sy
        } else {
            SIZE / 2.0
        };
        writeln!(
            s,
            r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="3" fill="{}" fill-opacity="0.7"><title>cluster {l}</title></circle>"#,
            PALETTE[l % PALETTE.len()]
        )
        .expect("write to String");
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn check_labels(points: &Tensor, labels: &[usize]) -> Result<()> {
    if points.ndim() != 2 || points.cols() != 2 || points.rows() != labels.len() {
        return Err(Error::contract(format!(
            "scatter needs [N × 2] points and N labels, got {:?} and {}",
            points.shape(),
            labels.len()
        )));
    }
    Ok(())
}

/// Projects `data` and writes `<stem>.csv` and `<stem>.svg`.
pub fn export_scatter(data: &Tensor, labels: &[usize], stem: &Path) -> Result<Projection> {
    let proj = pca_2d(data)?;
    let csv = stem.with_extension("csv");
    let svg = stem.with_extension("svg");
    fs::write(&csv, scatter_csv(&proj.points, labels)?).map_err(|e| Error::io(&csv, e))?;
    fs::write(&svg, scatter_svg(&proj.points, labels)?).map_err(|e| Error::io(&svg, e))?;
    Ok(proj)
}
