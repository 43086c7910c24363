//! Labeled embedding rows for external projection tools.

use std::io::Write;

use hud_core::model::{trace_query, ModelConfig, Triplet};
use hud_core::params::ParameterStore;
use hud_core::rng::RngStream;
use hud_core::tensor::Tensor2D;

use crate::error::Result;

pub const LABELS: [&str; 7] = [
    "visual_detail",
    "textual_probabilistic",
    "original_composition",
    "probabilistic_composition",
    "reference",
    "target",
    "modification",
];

/// Writes a tab-delimited table with header
/// `triplet label row x0 … x{W-1}`, where `W = max(D_A, D_H)`; rows of
/// narrower categories leave the trailing cells empty. Triplet `i` draws its
/// noise from stream `(noise_seed, i)`.
pub fn dump_embeddings<W: Write>(
    store: &ParameterStore,
    cfg: &ModelConfig,
    triplets: &[&Triplet],
    noise_seed: u64,
    w: W,
) -> Result<()> {
    let width = cfg.dims.atom_dim.max(cfg.dims.holistic_dim);
    let mut out = csv::WriterBuilder::new()
        .delimiter(b'\t')
        .flexible(false)
        .from_writer(w);
    let mut header = vec!["triplet".to_string(), "label".to_string(), "row".to_string()];
    header.extend((0..width).map(|d| format!("x{d}")));
    out.write_record(&header).map_err(std::io::Error::from)?;

    for (i, t) in triplets.iter().enumerate() {
        let mut rng = RngStream::with_stream(noise_seed, i as u64);
        let tr = trace_query(store, cfg, t, &mut rng)?;
        let groups: [(&str, Option<&Tensor2D>); 7] = [
            (LABELS[0], tr.visual_detail.as_ref()),
            (LABELS[1], tr.textual_probabilistic.as_ref()),
            (LABELS[2], tr.original_composition.as_ref()),
            (LABELS[3], tr.probabilistic_composition.as_ref()),
            (LABELS[4], Some(&tr.reference)),
            (LABELS[5], Some(&tr.target)),
            (LABELS[6], Some(&tr.modification)),
        ];
        for (label, values) in groups {
            let Some(values) = values else { continue };
            for (r, row) in values.iter_rows().enumerate() {
                let mut record = vec![i.to_string(), label.to_string(), r.to_string()];
                record.extend(row.iter().map(|v| v.to_string()));
                record.resize(3 + width, String::new());
                out.write_record(&record).map_err(std::io::Error::from)?;
            }
        }
    }
    out.flush()?;
    Ok(())
}
