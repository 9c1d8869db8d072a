//! `gendist compute` / `gendist targets`: distance matrices from aligned
//! FASTA and processed embedding target sets from matrix CSVs.

use std::path::Path;

use mushroomnet_core::embed::build_targets;
use mushroomnet_core::genetics::{bootstrap_uncertainty, distance_matrix, parse_fasta};

use crate::{Failure, RunConfig};

pub fn compute(cfg: RunConfig, out: &Path) -> Result<(), Failure> {
    let fasta_path = cfg.fasta.clone().expect("fasta flag is required");
    let text = crate::runio::read_text(&fasta_path)?;
    let seqs = parse_fasta(&text).map_err(|e| Failure::data(e.to_string()))?;
    let model = super::parse_model(&cfg.model)?;
    let matrix = distance_matrix(&seqs, model).map_err(|e| Failure::data(e.to_string()))?;
    crate::runio::write_text(&out.join("distance_matrix.csv"), &matrix.to_csv())?;
    if let Some(reps) = cfg.bootstrap {
        let sd = bootstrap_uncertainty(&seqs, model, reps, cfg.seed)
            .map_err(|e| Failure::data(e.to_string()))?;
        crate::runio::write_text(&out.join("bootstrap_sd.csv"), &sd.to_csv())?;
    }
    super::write_resolved_config(&cfg, out)?;
    println!(
        "distance matrix over {} sequences ({}) written under {}",
        seqs.len(),
        model.as_str(),
        out.display()
    );
    Ok(())
}

pub fn targets(cfg: RunConfig, out: &Path) -> Result<(), Failure> {
    let matrix_path = cfg.matrix.clone().expect("matrix flag is required");
    let mut matrix = super::load_matrix(&matrix_path)?;
    if let Some(name) = &cfg.drop {
        matrix = matrix
            .drop_species(name)
            .map_err(|e| Failure::data(e.to_string()))?;
    }
    let targets = build_targets(
        &matrix,
        super::parse_normalize(&cfg.normalize)?,
        cfg.diag,
        None,
    )
    .map_err(crate::classify_embed_error)?;
    crate::runio::write_text(&out.join("targets.csv"), &targets.to_csv())?;
    super::write_resolved_config(&cfg, out)?;
    println!(
        "targets for {} species (normalize {}, diag {:?}) written under {}",
        targets.k(),
        cfg.normalize,
        cfg.diag,
        out.display()
    );
    Ok(())
}
