//! One interface over frozen vectors and the trainable toy encoder.

use crate::autodiff::{Gradients, Graph, Var};
use crate::data::Document;
use crate::embedding::{EmbeddingStore, ToyEncoder};
use crate::episodes::{ClassPool, EpisodeIndices};
use crate::error::Result;
use crate::heads::{EpisodeVars, Parameters};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub enum Provider {
    /// Precomputed vectors; heads see constants.
    Frozen(EmbeddingStore),
    /// Texts encoded on the fly; gradients can reach the encoder.
    Toy {
        encoder: ToyEncoder,
        docs: Vec<Document>,
    },
}

/// Encoder handles on a graph, absent for frozen stores.
#[derive(Clone, Copy, Debug, Default)]
pub struct ProviderVars {
    encoder: Option<(Var, Var)>,
}

impl Provider {
    pub fn dim(&self) -> usize {
        match self {
            Provider::Frozen(s) => s.dim(),
            Provider::Toy { encoder, .. } => encoder.dim(),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Provider::Frozen(s) => s.len(),
            Provider::Toy { docs, .. } => docs.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn id(&self, i: usize) -> &str {
        match self {
            Provider::Frozen(s) => &s.get(i).id,
            Provider::Toy { docs, .. } => &docs[i].id,
        }
    }

    pub fn label(&self, i: usize) -> &str {
        match self {
            Provider::Frozen(s) => &s.get(i).label,
            Provider::Toy { docs, .. } => &docs[i].label,
        }
    }

    pub fn pool(&self) -> ClassPool {
        ClassPool::from_labels((0..self.len()).map(|i| self.label(i)))
    }

    pub fn encoder(&self) -> Option<&ToyEncoder> {
        match self {
            Provider::Frozen(_) => None,
            Provider::Toy { encoder, .. } => Some(encoder),
        }
    }

    pub fn is_trainable(&self) -> bool {
        self.encoder().is_some()
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> ProviderVars {
        let encoder = self.encoder().map(|e| {
            let vars = e.bind_all(g, trainable);
            (vars[0], vars[1])
        });
        ProviderVars { encoder }
    }

    /// `[rows.len(), d]` vectors of the given items.
    pub fn rows(&self, g: &mut Graph, vars: &ProviderVars, rows: &[usize]) -> Result<Var> {
        match (self, vars.encoder) {
            (Provider::Toy { encoder, docs }, Some((t, p))) => {
                let texts: Vec<&str> = rows.iter().map(|&i| docs[i].text.as_str()).collect();
                encoder.encode_batch(g, t, p, &texts)
            }
            (Provider::Toy { encoder, docs }, None) => {
                let (t, p) = (
                    g.constant(&encoder.token_table),
                    g.constant(&encoder.projection),
                );
                let texts: Vec<&str> = rows.iter().map(|&i| docs[i].text.as_str()).collect();
                encoder.encode_batch(g, t, p, &texts)
            }
            (Provider::Frozen(s), _) => Ok(g.constant(&s.matrix(rows)?)),
        }
    }

    /// Plain `[rows.len(), d]` matrix.
    pub fn matrix(&self, rows: &[usize]) -> Result<Tensor> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let v = self.rows(&mut g, &vars, rows)?;
        Ok(g.tensor(v))
    }

    pub fn episode(
        &self,
        g: &mut Graph,
        vars: &ProviderVars,
        idx: &EpisodeIndices,
    ) -> Result<EpisodeVars> {
        let support = self.rows(g, vars, &idx.support_flat())?;
        let query = self.rows(g, vars, &idx.query_flat())?;
        let unlabeled = if idx.unlabeled.is_empty() {
            None
        } else {
            Some(self.rows(g, vars, &idx.unlabeled)?)
        };
        Ok(EpisodeVars {
            support,
            query,
            unlabeled,
            ways: idx.classes.len(),
            shots: idx.support.first().map_or(0, Vec::len),
        })
    }

    /// Adds encoder gradients; a no-op for frozen stores.
    pub fn absorb(&mut self, vars: &ProviderVars, grads: &Gradients) {
        if let (Provider::Toy { encoder, .. }, Some((t, p))) = (self, vars.encoder) {
            encoder.absorb(&[t, p], grads);
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Provider::Frozen(_) => Vec::new(),
            Provider::Toy { encoder, .. } => encoder.tensors_mut(),
        }
    }
}
