use serde::{Deserialize, Serialize};

use crate::seq2seq::{Axis, Layer, Seq2SeqModel};

/// Mean absolute value of every weight incident to each hidden unit of one
/// layer (biases excluded).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeuronStrength {
    pub layer: Layer,
    pub values: Vec<f64>,
}

impl NeuronStrength {
    pub fn compute(model: &Seq2SeqModel, layer: Layer) -> NeuronStrength {
        let h = model.config.hidden;
        let mut sum = vec![0.0; h];
        let mut count = vec![0usize; h];
        let incidences = model.incidences();
        for inc in incidences.iter().filter(|i| i.layer == layer && !i.bias) {
            let m = model.param(&inc.tensor).expect("incidence names a tensor");
            // A square recurrent matrix lists a unit as both row and
            // column; its diagonal entry is counted once.
            let also_col = incidences.iter().any(|o| o.tensor == inc.tensor && o.layer == layer && o.axis == Axis::Col && o.offset == inc.offset);
            for (j, (s, c)) in sum.iter_mut().zip(count.iter_mut()).enumerate() {
                match inc.axis {
                    Axis::Col => {
                        for r in 0..m.rows() {
                            *s += m.get(r, inc.offset + j).abs();
                        }
                        *c += m.rows();
                    }
                    Axis::Row => {
                        for (k, w) in m.row(inc.offset + j).iter().enumerate() {
                            if also_col && k == inc.offset + j {
                                continue;
                            }
                            *s += w.abs();
                            *c += 1;
                        }
                    }
                }
            }
        }
        let values = sum.iter().zip(&count).map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 }).collect();
        NeuronStrength { layer, values }
    }
}
