use std::io::{BufRead, Write};

use ndarray::Array2;

use super::model::{layout, PredictorConfig, PredictorModel, PredictorVocab};
use super::PredictorError;
use crate::records::{read_records, write_records, Record, RecordSet};

const FORMAT: &str = "intentkg-predictor";
const VERSION: u32 = 1;

pub fn write_predictor<W: Write>(model: &PredictorModel, out: W) -> Result<(), PredictorError> {
    let mut records = vec![
        Record::Header {
            format: FORMAT.into(),
            version: VERSION,
            meta: serde_json::to_value(&model.config).expect("config serializes"),
        },
        Record::Vocab {
            name: "intents".into(),
            items: model.vocab.intents.clone(),
        },
        Record::Vocab {
            name: "locations".into(),
            items: model.vocab.locations.clone(),
        },
    ];
    for (name, p) in &model.params {
        records.push(Record::Matrix {
            name: name.clone(),
            rows: p.nrows(),
            cols: p.ncols(),
            data: p.iter().copied().collect(),
        });
    }
    write_records(&records, out)?;
    Ok(())
}

pub fn read_predictor<R: BufRead>(input: R) -> Result<PredictorModel, PredictorError> {
    let set = RecordSet::new(read_records(input)?, FORMAT, VERSION)?;
    let config: PredictorConfig =
        serde_json::from_value(set.meta().clone()).map_err(|e| PredictorError::Config(e.to_string()))?;
    config.check()?;
    let vocab = PredictorVocab {
        intents: set.vocab("intents")?.to_vec(),
        locations: set.vocab("locations")?.to_vec(),
    };
    let mut params = Vec::new();
    for (name, shape) in layout(&config) {
        let (rows, cols, data) = set.matrix(&name)?;
        if (rows, cols) != shape {
            return Err(PredictorError::Config(format!(
                "parameter {name} has shape {rows}x{cols}, expected {}x{}",
                shape.0, shape.1
            )));
        }
        let m = Array2::from_shape_vec(shape, data.to_vec())
            .map_err(|e| PredictorError::Config(format!("parameter {name}: {e}")))?;
        params.push((name, m));
    }
    let model = PredictorModel { config, vocab, params };
    if model.vocab.intents.len() != model.config.n_intents || model.vocab.locations.len() != model.config.n_locations {
        return Err(PredictorError::VocabMismatch("stored vocabulary does not match stored config".into()));
    }
    if !model.is_finite() {
        return Err(PredictorError::NonFinite);
    }
    Ok(model)
}
