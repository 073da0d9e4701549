//! Encoder means stored alongside database records.

use super::{par_map, Database, PipelineError};
use crate::latentmodel::{encode_batch, ModelParameters};

const CHUNK: usize = 64;

/// Replaces every record's latent vector with its posterior mean under `model`.
pub fn annotate_latents(db: &mut Database, model: &ModelParameters, threads: usize) -> Result<(), PipelineError> {
    if model.latent_dim() != db.latent_dim {
        return Err(PipelineError::Invalid(format!(
            "model latent size {} differs from database latent size {}",
            model.latent_dim(),
            db.latent_dim
        )));
    }
    let chunks: Vec<Vec<usize>> =
        (0..db.len()).collect::<Vec<_>>().chunks(CHUNK).map(<[usize]>::to_vec).collect();
    let records = db.records();
    let encoded = par_map(&chunks, threads, |idx| {
        let cells: Vec<_> = idx.iter().map(|&i| &records[i].structure).collect();
        encode_batch(&cells, model)
    });
    let mut means = Vec::with_capacity(db.len());
    for batch in encoded {
        means.extend(batch?.into_iter().map(|pp| pp.mean));
    }
    for (i, z) in means.into_iter().enumerate() {
        db.set_latent(i, z)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::homogenization::{MaterialSpec, StiffnessComponents};
    use crate::latentmodel::{encode, Architecture};
    use crate::microstructure::Microstructure;
    use crate::pipeline::Record;

    #[test]
    fn latents_match_single_encodes_for_any_thread_count() {
        let model = ModelParameters::init(Architecture::tiny(), 1).unwrap();
        let mut db = Database::new(8, 8, 2, MaterialSpec::default());
        for id in 0..150u64 {
            let s = Microstructure::from_fn(8, 8, |r, c| (r * 8 + c + id as usize) % 5 != 0);
            db.insert(Record { id, structure: s, properties: StiffnessComponents::new(0.5, 0.1, 0.5, 0.1), latent: None }).unwrap();
        }
        let mut other = db.clone();
        annotate_latents(&mut db, &model, 1).unwrap();
        annotate_latents(&mut other, &model, 3).unwrap();
        assert_eq!(db, other);
        for r in db.records().iter().step_by(17) {
            assert_eq!(r.latent.as_ref().unwrap(), &encode(&r.structure, &model).unwrap().mean);
        }
    }

    #[test]
    fn latent_size_must_agree() {
        let model = ModelParameters::init(Architecture::tiny(), 1).unwrap();
        let mut db = Database::new(8, 8, 3, MaterialSpec::default());
        assert!(annotate_latents(&mut db, &model, 1).is_err());
    }
}
