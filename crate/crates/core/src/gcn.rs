//! Graph classifier over reconstructed connectivity, plus the dense FCN baseline.
//!
//! The graph of a reconstruction `x̂` uses the rows of the symmetric matrix as
//! node features and `D^{-1/2} (|x̂| + I) D^{-1/2}` as the propagation matrix.
//! Two GCN layers and two dense layers, all two units wide, produce two
//! logits; node embeddings are mean-pooled between the two stages.

use rand::Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::data::edge_count;
use crate::nn::{layer_params, layer_params_mut, linear_vars, Linear, LinearVars, ModelError, Module};
use crate::scalar::Scalar;

pub const GCN_WIDTH: usize = 2;
pub const NUM_CLASSES: usize = 2;
/// Initial bias of the ReLU layers of the GCN classifier.
pub const HIDDEN_BIAS_INIT: f64 = 0.1;
pub const FCN_WIDTHS: [usize; 3] = [64, 16, 4];

/// Dense graph built from one reconstruction.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphInput<T> {
    pub k: usize,
    /// `k x k`, row `i` is the reconstructed profile of parcel `i`.
    pub node_features: Vec<T>,
    /// `k x k` symmetric normalized adjacency with self-loops.
    pub adj_norm: Vec<T>,
}

/// Tape handles of a graph.
#[derive(Clone, Copy, Debug)]
pub struct GraphVars {
    pub features: Var,
    pub adj_norm: Var,
}

fn check_finite<T: Scalar>(values: &[T], what: &'static str) -> Result<(), ModelError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(ModelError::NonFinite(what))
    }
}

/// Builds the graph of a `[E]` or `[1, E]` reconstruction on the tape; the
/// adjacency stays differentiable w.r.t. the reconstruction.
pub fn build_graph_on_tape<T: Scalar>(tape: &mut Tape<T>, xhat: Var, k: usize) -> Result<GraphVars, ModelError> {
    check_finite(tape.value(xhat), "reconstruction")?;
    let features = tape.unflatten_upper(xhat, k)?;
    let abs = tape.abs(features)?;
    let mut eye = vec![T::zero(); k * k];
    for i in 0..k {
        eye[i * k + i] = T::one();
    }
    let eye = tape.constant(vec![k, k], eye)?;
    let a = tape.add(abs, eye)?;
    let ones = tape.constant(vec![k, 1], vec![T::one(); k])?;
    let degree = tape.matmul(a, ones)?;
    let inv_sqrt = tape.powf(degree, T::of(-0.5))?;
    let inv_sqrt_t = tape.transpose(inv_sqrt)?;
    let scale = tape.matmul(inv_sqrt, inv_sqrt_t)?;
    let adj_norm = tape.hadamard(a, scale)?;
    Ok(GraphVars { features, adj_norm })
}

/// Value-level graph construction.
pub fn build_graph<T: Scalar>(xhat: &[T], k: usize) -> Result<GraphInput<T>, ModelError> {
    if xhat.len() != edge_count(k) {
        return Err(ModelError::Length {
            what: "reconstruction",
            expected: edge_count(k),
            actual: xhat.len(),
        });
    }
    let mut tape = Tape::new();
    let x = tape.constant(vec![xhat.len()], xhat.to_vec())?;
    let g = build_graph_on_tape(&mut tape, x, k)?;
    Ok(GraphInput {
        k,
        node_features: tape.value(g.features).to_vec(),
        adj_norm: tape.value(g.adj_norm).to_vec(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GcnParams<T> {
    pub gcn1: Linear<T>,
    pub gcn2: Linear<T>,
    pub mlp1: Linear<T>,
    pub mlp2: Linear<T>,
}

#[derive(Clone, Copy, Debug)]
pub struct GcnVars {
    pub gcn1: LinearVars,
    pub gcn2: LinearVars,
    pub mlp1: LinearVars,
    pub mlp2: LinearVars,
}

impl GcnVars {
    pub fn all(&self) -> Vec<Var> {
        linear_vars(&[self.gcn1, self.gcn2, self.mlp1, self.mlp2])
    }
}

impl<T: Scalar> GcnParams<T> {
    /// Glorot weights; hidden biases start at [`HIDDEN_BIAS_INIT`] so that no
    /// two-unit ReLU layer begins inactive on every input.
    pub fn init<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Self {
        let mut p = Self {
            gcn1: Linear::glorot(k, GCN_WIDTH, rng),
            gcn2: Linear::glorot(GCN_WIDTH, GCN_WIDTH, rng),
            mlp1: Linear::glorot(GCN_WIDTH, GCN_WIDTH, rng),
            mlp2: Linear::glorot(GCN_WIDTH, NUM_CLASSES, rng),
        };
        for l in [&mut p.gcn1, &mut p.gcn2, &mut p.mlp1] {
            l.bias.values_mut().iter_mut().for_each(|b| *b = T::of(HIDDEN_BIAS_INIT));
        }
        p
    }

    pub fn zeros(k: usize) -> Self {
        Self {
            gcn1: Linear::zeros(k, GCN_WIDTH),
            gcn2: Linear::zeros(GCN_WIDTH, GCN_WIDTH),
            mlp1: Linear::zeros(GCN_WIDTH, GCN_WIDTH),
            mlp2: Linear::zeros(GCN_WIDTH, NUM_CLASSES),
        }
    }

    pub fn k(&self) -> usize {
        self.gcn1.inputs()
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> GcnVars {
        GcnVars {
            gcn1: self.gcn1.bind(tape),
            gcn2: self.gcn2.bind(tape),
            mlp1: self.mlp1.bind(tape),
            mlp2: self.mlp2.bind(tape),
        }
    }

    /// Logits `[1, 2]` of one graph.
    pub fn classify_graph(&self, tape: &mut Tape<T>, vars: &GcnVars, graph: GraphVars) -> Result<Var, ModelError> {
        let k = self.k();
        let fs = tape.shape(graph.features).to_vec();
        if fs != [k, k] || tape.shape(graph.adj_norm) != [k, k] {
            return Err(ModelError::Length {
                what: "graph size",
                expected: k,
                actual: fs.first().copied().unwrap_or(0),
            });
        }
        let ax = tape.matmul(graph.adj_norm, graph.features)?;
        let h1 = Linear::forward(tape, vars.gcn1, ax)?;
        let h1 = tape.relu(h1)?;
        let ah = tape.matmul(graph.adj_norm, h1)?;
        let h2 = Linear::forward(tape, vars.gcn2, ah)?;
        let h2 = tape.relu(h2)?;
        let pool = tape.constant(vec![1, k], vec![T::one() / T::of(k as f64); k])?;
        let pooled = tape.matmul(pool, h2)?;
        let h3 = Linear::forward(tape, vars.mlp1, pooled)?;
        let h3 = tape.relu(h3)?;
        Ok(Linear::forward(tape, vars.mlp2, h3)?)
    }

    /// Logits `[B, 2]` for a `[B, E]` batch of reconstructions.
    pub fn classify_batch(&self, tape: &mut Tape<T>, vars: &GcnVars, xhat: Var) -> Result<Var, ModelError> {
        let k = self.k();
        let shape = tape.shape(xhat).to_vec();
        if shape.len() != 2 || shape[1] != edge_count(k) {
            return Err(ModelError::Length {
                what: "classifier input",
                expected: edge_count(k),
                actual: shape.last().copied().unwrap_or(0),
            });
        }
        let mut rows = Vec::with_capacity(shape[0]);
        for b in 0..shape[0] {
            let row = tape.slice_rows(xhat, b, b + 1)?;
            let graph = build_graph_on_tape(tape, row, k)?;
            rows.push(self.classify_graph(tape, vars, graph)?);
        }
        Ok(tape.concat(&rows)?)
    }

    /// Value-level classification of a prepared graph.
    pub fn classify(&self, graph: &GraphInput<T>) -> Result<[T; 2], ModelError> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let g = GraphVars {
            features: tape.constant(vec![graph.k, graph.k], graph.node_features.clone())?,
            adj_norm: tape.constant(vec![graph.k, graph.k], graph.adj_norm.clone())?,
        };
        let out = self.classify_graph(&mut tape, &vars, g)?;
        let v = tape.value(out);
        Ok([v[0], v[1]])
    }
}

impl<T: Scalar> Module<T> for GcnParams<T> {
    fn params(&self) -> Vec<(String, &Tensor<T>)> {
        layer_params(
            "gcn",
            vec![("gcn1", &self.gcn1), ("gcn2", &self.gcn2), ("mlp1", &self.mlp1), ("mlp2", &self.mlp2)],
        )
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        layer_params_mut(
            "gcn",
            vec![
                ("gcn1", &mut self.gcn1),
                ("gcn2", &mut self.gcn2),
                ("mlp1", &mut self.mlp1),
                ("mlp2", &mut self.mlp2),
            ],
        )
    }
}

/// Four dense layers `E -> 64 -> 16 -> 4 -> 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct FcnParams<T> {
    pub layers: [Linear<T>; 4],
}

#[derive(Clone, Copy, Debug)]
pub struct FcnVars {
    pub layers: [LinearVars; 4],
}

impl FcnVars {
    pub fn all(&self) -> Vec<Var> {
        linear_vars(&self.layers)
    }
}

const FCN_NAMES: [&str; 4] = ["fc1", "fc2", "fc3", "fc4"];

impl<T: Scalar> FcnParams<T> {
    fn widths(edges: usize) -> [usize; 5] {
        [edges, FCN_WIDTHS[0], FCN_WIDTHS[1], FCN_WIDTHS[2], NUM_CLASSES]
    }

    pub fn init<R: Rng + ?Sized>(edges: usize, rng: &mut R) -> Self {
        let w = Self::widths(edges);
        Self {
            layers: std::array::from_fn(|i| Linear::glorot(w[i], w[i + 1], rng)),
        }
    }

    pub fn zeros(edges: usize) -> Self {
        let w = Self::widths(edges);
        Self {
            layers: std::array::from_fn(|i| Linear::zeros(w[i], w[i + 1])),
        }
    }

    pub fn edges(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> FcnVars {
        FcnVars {
            layers: std::array::from_fn(|i| self.layers[i].bind(tape)),
        }
    }

    /// Logits `[B, 2]` for a `[B, E]` batch.
    pub fn forward(&self, tape: &mut Tape<T>, vars: &FcnVars, x: Var) -> Result<Var, ModelError> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 2 || shape[1] != self.edges() {
            return Err(ModelError::Length {
                what: "classifier input",
                expected: self.edges(),
                actual: shape.last().copied().unwrap_or(0),
            });
        }
        let mut h = x;
        for (i, lv) in vars.layers.iter().enumerate() {
            h = Linear::forward(tape, *lv, h)?;
            if i + 1 < vars.layers.len() {
                h = tape.relu(h)?;
            }
        }
        Ok(h)
    }

    /// Value-level logits of one edge vector.
    pub fn classify(&self, xhat: &[T]) -> Result<[T; 2], ModelError> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let x = tape.constant(vec![1, xhat.len()], xhat.to_vec())?;
        let out = self.forward(&mut tape, &vars, x)?;
        let v = tape.value(out);
        Ok([v[0], v[1]])
    }
}

impl<T: Scalar> Module<T> for FcnParams<T> {
    fn params(&self) -> Vec<(String, &Tensor<T>)> {
        layer_params("fcn", FCN_NAMES.iter().copied().zip(self.layers.iter()).collect())
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        layer_params_mut("fcn", FCN_NAMES.iter().copied().zip(self.layers.iter_mut()).collect())
    }
}

/// Which downstream classifier a model uses.
#[derive(Clone, Debug, PartialEq)]
pub enum Classifier<T> {
    Gcn(GcnParams<T>),
    Fcn(FcnParams<T>),
}

#[derive(Clone, Copy, Debug)]
pub enum ClassifierVars {
    Gcn(GcnVars),
    Fcn(FcnVars),
}

impl ClassifierVars {
    pub fn all(&self) -> Vec<Var> {
        match self {
            ClassifierVars::Gcn(v) => v.all(),
            ClassifierVars::Fcn(v) => v.all(),
        }
    }
}

impl<T: Scalar> Classifier<T> {
    pub fn bind(&self, tape: &mut Tape<T>) -> ClassifierVars {
        match self {
            Classifier::Gcn(p) => ClassifierVars::Gcn(p.bind(tape)),
            Classifier::Fcn(p) => ClassifierVars::Fcn(p.bind(tape)),
        }
    }

    pub fn forward(&self, tape: &mut Tape<T>, vars: &ClassifierVars, x: Var) -> Result<Var, ModelError> {
        match (self, vars) {
            (Classifier::Gcn(p), ClassifierVars::Gcn(v)) => p.classify_batch(tape, v, x),
            (Classifier::Fcn(p), ClassifierVars::Fcn(v)) => p.forward(tape, v, x),
            _ => Err(ModelError::Length {
                what: "classifier binding",
                expected: 0,
                actual: 1,
            }),
        }
    }
}

impl<T: Scalar> Module<T> for Classifier<T> {
    fn params(&self) -> Vec<(String, &Tensor<T>)> {
        match self {
            Classifier::Gcn(p) => p.params(),
            Classifier::Fcn(p) => p.params(),
        }
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        match self {
            Classifier::Gcn(p) => p.params_mut(),
            Classifier::Fcn(p) => p.params_mut(),
        }
    }
}
