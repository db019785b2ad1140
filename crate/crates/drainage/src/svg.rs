//! Self-contained SVG scatter of a 2D dataset under a trained model:
//! points colored by open-drainage prediction, drainage-dominated regions
//! shaded gray.

use crate::data::LabeledDataset;
use crate::eval::{predict_open, Prediction};
use crate::mat::Matrix;
use crate::model::Model;
use crate::{Error, Result};

const SIZE: f64 = 600.0;
const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];
const DRAIN_REGION: &str = "#d9d9d9";
const DRAIN_POINT: &str = "#4a4a4a";

/// Renders the dataset at `cells × cells` background resolution. The model
/// is evaluated at every cell center; cells predicted as drainage are
/// shaded.
pub fn scatter_with_drainage_regions(
    model: &dyn Model,
    ds: &LabeledDataset,
    cells: usize,
) -> Result<String> {
    if ds.feature_dim() != 2 {
        return Err(Error::InvalidParameter(format!(
            "svg scatter needs 2D features, got {}",
            ds.feature_dim()
        )));
    }
    if ds.is_empty() || cells == 0 {
        return Err(Error::InvalidParameter(
            "svg scatter needs samples and a positive cell count".into(),
        ));
    }

    let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..ds.len() {
        let p = ds.features.row(i);
        min_x = min_x.min(p[0]);
        max_x = max_x.max(p[0]);
        min_y = min_y.min(p[1]);
        max_y = max_y.max(p[1]);
    }
    let pad_x = 0.08 * (max_x - min_x).max(1e-9);
    let pad_y = 0.08 * (max_y - min_y).max(1e-9);
    min_x -= pad_x;
    max_x += pad_x;
    min_y -= pad_y;
    max_y += pad_y;

    let to_px = |x: f64, y: f64| -> (f64, f64) {
        (
            (x - min_x) / (max_x - min_x) * SIZE,
            // SVG y grows downward.
            SIZE - (y - min_y) / (max_y - min_y) * SIZE,
        )
    };

    let mut out = String::with_capacity(1 << 16);
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SIZE}\" height=\"{SIZE}\" \
         viewBox=\"0 0 {SIZE} {SIZE}\">\n<rect width=\"{SIZE}\" height=\"{SIZE}\" fill=\"white\"/>\n"
    ));

    // Drainage-region shading over the cell grid.
    let cell_w = (max_x - min_x) / cells as f64;
    let cell_h = (max_y - min_y) / cells as f64;
    let mut centers = Vec::with_capacity(cells * cells);
    for iy in 0..cells {
        for ix in 0..cells {
            centers.push(vec![
                min_x + (ix as f64 + 0.5) * cell_w,
                min_y + (iy as f64 + 0.5) * cell_h,
            ]);
        }
    }
    let grid = Matrix::from_rows(&centers)?;
    let logits = model.forward_batch(&grid)?;
    let px_cell = SIZE / cells as f64;
    for (k, z) in logits.iter().enumerate() {
        if predict_open(z) == Prediction::Drain {
            let ix = k % cells;
            let iy = k / cells;
            let x = ix as f64 * px_cell;
            // Row iy covers world-y [min_y + iy·h, ...]; flip to pixel space.
            let y = SIZE - (iy + 1) as f64 * px_cell;
            out.push_str(&format!(
                "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{px_cell:.2}\" height=\"{px_cell:.2}\" \
                 fill=\"{DRAIN_REGION}\"/>\n"
            ));
        }
    }

    // Sample points, colored by the model's open prediction.
    let preds = model.forward_batch(&ds.features)?;
    for (i, z) in preds.iter().enumerate() {
        let p = ds.features.row(i);
        let (x, y) = to_px(p[0], p[1]);
        let fill = match predict_open(z) {
            Prediction::Class(c) => PALETTE[c % PALETTE.len()],
            Prediction::Drain => DRAIN_POINT,
        };
        out.push_str(&format!(
            "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"2.4\" fill=\"{fill}\" fill-opacity=\"0.85\"/>\n"
        ));
    }

    out.push_str("</svg>\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{self, DrainageHead, ModelSpec, RbfLinearSpec};

    #[test]
    fn rejects_non_2d_data() {
        let spec = ModelSpec::Mlp(crate::model::MlpSpec {
            input_dim: 3,
            hidden: vec![],
            num_classes: 2,
            drainage: DrainageHead::Learned,
            init_seed: 0,
        });
        let m = model::build(&spec).unwrap();
        let ds = LabeledDataset::new(
            Matrix::from_rows(&[vec![0.0, 0.0, 0.0]]).unwrap(),
            vec![0],
            2,
        )
        .unwrap();
        assert!(scatter_with_drainage_regions(m.as_ref(), &ds, 10).is_err());
    }

    #[test]
    fn renders_points_and_is_self_contained() {
        let spec = ModelSpec::RbfLinear(RbfLinearSpec {
            num_classes: 2,
            grid: 4,
            span: 3.0,
            gamma: 0.3,
            drainage: DrainageHead::Learned,
            init_seed: 0,
        });
        let mut m = model::build(&spec).unwrap();
        // Push drainage weights up so some region drains.
        for v in m.params_mut().tensors[0].data[32..48].iter_mut() {
            *v = 2.0;
        }
        let ds = LabeledDataset::new(
            Matrix::from_rows(&[vec![-1.0, 0.0], vec![1.0, 0.5], vec![0.0, -1.5]]).unwrap(),
            vec![0, 1, 0],
            2,
        )
        .unwrap();
        let svg = scatter_with_drainage_regions(m.as_ref(), &ds, 20).unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.ends_with("</svg>\n"));
        assert_eq!(svg.matches("<circle").count(), 3);
        assert!(!svg.contains("http://") || svg.contains("xmlns"));
    }
}
