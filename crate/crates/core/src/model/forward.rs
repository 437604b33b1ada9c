use rand_chacha::ChaCha8Rng;

use super::config::{ModelConfig, Variant};
use super::layers::{
    classify, gat_layer, gcn_layer, mean_pool, project_shared, AttentionHead, ClassifierVars,
    Topology,
};
use super::params::{layer_prefix, ModelParams, ParamVars};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{
    build_multimodal_graph, build_unimodal_graph, resize_visual_rows, BatchedGraph, Modality,
    MultimodalGraph,
};
use crate::io::SampleBundle;
use crate::tensor::{Real, Tensor};

/// Probability floor applied before taking logarithms in the loss.
pub const PROB_FLOOR: f64 = 1e-7;

/// The two unimodal graphs of one sample, with visual rows already resized.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleGraphs<T> {
    pub text: MultimodalGraph<T>,
    pub visual: MultimodalGraph<T>,
}

impl<T: Real> SampleGraphs<T> {
    pub fn new(text: Tensor<T>, visual: Tensor<T>, self_loops: bool) -> Result<Self> {
        Ok(Self {
            text: build_unimodal_graph(text, Modality::Text, self_loops)?,
            visual: build_unimodal_graph(visual, Modality::Visual, self_loops)?,
        })
    }

    /// Resizes the raw visual rows and builds both graphs.
    pub fn from_bundle(bundle: &SampleBundle, self_loops: bool) -> Result<Self> {
        let visual = resize_visual_rows(&bundle.visual_features)?;
        Self::new(bundle.text_features.cast(), visual.cast(), self_loops)
    }

    /// The graph (or graph pair) a variant consumes.
    pub fn for_variant(&self, variant: Variant) -> Result<VariantGraph<T>> {
        Ok(match variant {
            Variant::Full | Variant::Gcn => {
                VariantGraph::Joint(build_multimodal_graph(&self.text, &self.visual)?)
            }
            Variant::Concat => VariantGraph::Split {
                text: self.text.clone(),
                visual: self.visual.clone(),
            },
            Variant::Text => VariantGraph::Joint(self.text.clone()),
            Variant::Visual => VariantGraph::Joint(self.visual.clone()),
        })
    }
}

/// Per-sample model input.
#[derive(Debug, Clone, PartialEq)]
pub enum VariantGraph<T> {
    Joint(MultimodalGraph<T>),
    Split {
        text: MultimodalGraph<T>,
        visual: MultimodalGraph<T>,
    },
}

/// Batched model input.
#[derive(Debug, Clone)]
pub enum ModelInput<T> {
    Joint(BatchedGraph<T>),
    Split {
        text: BatchedGraph<T>,
        visual: BatchedGraph<T>,
    },
}

impl<T: Real> ModelInput<T> {
    pub fn batch(graphs: &[&VariantGraph<T>]) -> Result<Self> {
        let mut joint = Vec::new();
        let mut text = Vec::new();
        let mut visual = Vec::new();
        for g in graphs {
            match g {
                VariantGraph::Joint(g) => joint.push(g),
                VariantGraph::Split { text: t, visual: v } => {
                    text.push(t);
                    visual.push(v);
                }
            }
        }
        match (joint.is_empty(), text.is_empty()) {
            (false, true) => Ok(ModelInput::Joint(BatchedGraph::new(&joint)?)),
            (true, false) => Ok(ModelInput::Split {
                text: BatchedGraph::new(&text)?,
                visual: BatchedGraph::new(&visual)?,
            }),
            (true, true) => Err(Error::Contract("cannot batch zero samples".into())),
            (false, false) => Err(Error::Contract(
                "a batch mixes joint and split sample graphs".into(),
            )),
        }
    }

    pub fn single(graph: &MultimodalGraph<T>) -> Self {
        ModelInput::Joint(BatchedGraph::single(graph))
    }

    pub fn n_graphs(&self) -> usize {
        match self {
            ModelInput::Joint(b) => b.n_graphs(),
            ModelInput::Split { text, .. } => text.n_graphs(),
        }
    }
}

/// Class scores for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<T> {
    pub logits: Vec<T>,
    pub probs: Vec<T>,
}

impl<T: Real> Prediction<T> {
    pub fn from_logits(logits: Vec<T>) -> Self {
        let mut probs = logits.clone();
        crate::autodiff::softmax_in_place(&mut probs);
        Self { logits, probs }
    }

    /// Most probable class; ties go to the lowest index (class 0 = real).
    pub fn class(&self) -> usize {
        self.probs
            .iter()
            .enumerate()
            .fold((0, T::neg_infinity()), |best, (i, &p)| if p > best.1 { (i, p) } else { best })
            .0
    }
}

/// Mean negative log-likelihood of the labelled classes, probabilities
/// clamped to `[1e-7, 1 - 1e-7]`.
pub fn cross_entropy_loss<T: Real>(preds: &[Prediction<T>], labels: &[usize]) -> Result<T> {
    if preds.len() != labels.len() || preds.is_empty() {
        return Err(Error::Contract(format!(
            "{} predictions but {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let floor = T::lit(PROB_FLOOR);
    let total: T = preds
        .iter()
        .zip(labels)
        .map(|(p, &y)| -p.probs[y].max(floor).min(T::one() - floor).ln())
        .sum();
    Ok(total / T::from_usize(labels.len()).expect("batch size"))
}

/// Node embeddings after the graph layers.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub nodes: Var,
    /// Edge weights per attention layer and head, in order.
    pub attention: Vec<Var>,
}

/// Tape handles produced by one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: Var,
    pub attention: Vec<Var>,
}

/// The fusion network: configuration plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GameOn<T> {
    config: ModelConfig,
    params: ModelParams<T>,
}

impl<T: Real> GameOn<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = ModelParams::init(&config, seed)?;
        Ok(Self { config, params })
    }

    pub fn from_parts(config: ModelConfig, params: ModelParams<T>) -> Result<Self> {
        config.validate()?;
        let named = params.iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
        ModelParams::from_named(&config, named)?;
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ModelParams<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams<T> {
        &mut self.params
    }

    pub fn into_parts(self) -> (ModelConfig, ModelParams<T>) {
        (self.config, self.params)
    }

    pub fn cast<U: Real>(&self) -> GameOn<U> {
        GameOn {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }

    fn heads(&self, vars: &ParamVars, layer: usize) -> Result<Vec<AttentionHead>> {
        (0..self.config.n_heads)
            .map(|h| {
                let p = layer_prefix(&self.config, layer, h);
                Ok(AttentionHead {
                    w_feat: vars.get(&format!("{p}.w_feat"))?,
                    b_feat: vars.opt(&format!("{p}.b_feat")),
                    w_att: vars.opt(&format!("{p}.w_att")),
                    b_att: vars.opt(&format!("{p}.b_att")),
                    a: vars.get(&format!("{p}.a"))?,
                })
            })
            .collect()
    }

    /// Shared projection followed by the graph layers.
    pub fn encode(
        &self,
        tape: &mut Tape<T>,
        vars: &ParamVars,
        graph: &BatchedGraph<T>,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Encoded> {
        let x = tape.constant(graph.features().clone());
        let mut h = project_shared(tape, x, vars.get("proj.w")?, vars.get("proj.b")?)?;
        let topo = Topology {
            n_nodes: graph.n_nodes(),
            src: graph.src().clone(),
            dst: graph.dst().clone(),
        };
        let slope = T::lit(self.config.leaky_slope);
        let mut attention = Vec::new();
        for layer in 0..self.config.n_gat_layers {
            if self.config.variant.uses_attention() {
                let heads = self.heads(vars, layer)?;
                let out = gat_layer(tape, h, &heads, &topo, slope, self.config.dropout, rng.as_deref_mut())?;
                attention.extend(out.attention);
                h = out.nodes;
            } else {
                let p = layer_prefix(&self.config, layer, 0);
                h = gcn_layer(
                    tape,
                    h,
                    vars.get(&format!("{p}.w_feat"))?,
                    vars.opt(&format!("{p}.b_feat")),
                    &topo,
                    self.config.dropout,
                    rng.as_deref_mut(),
                )?;
            }
        }
        Ok(Encoded { nodes: h, attention })
    }

    fn pooled(
        &self,
        tape: &mut Tape<T>,
        vars: &ParamVars,
        graph: &BatchedGraph<T>,
        rng: Option<&mut ChaCha8Rng>,
        attention: &mut Vec<Var>,
    ) -> Result<Var> {
        let enc = self.encode(tape, vars, graph, rng)?;
        attention.extend(enc.attention);
        mean_pool(tape, enc.nodes, graph.graph_of().clone(), graph.n_graphs())
    }

    fn check_input(&self, input: &ModelInput<T>) -> Result<()> {
        let variant = self.config.variant;
        let ok = match (variant, input) {
            (Variant::Full | Variant::Gcn, ModelInput::Joint(_)) => true,
            (Variant::Text, ModelInput::Joint(b)) => b.is_unimodal(Modality::Text),
            (Variant::Visual, ModelInput::Joint(b)) => b.is_unimodal(Modality::Visual),
            (Variant::Concat, ModelInput::Split { text, visual }) => {
                text.is_unimodal(Modality::Text)
                    && visual.is_unimodal(Modality::Visual)
                    && text.n_graphs() == visual.n_graphs()
            }
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Contract(format!(
                "input graphs do not match the {variant} variant"
            )))
        }
    }

    /// Records the forward pass. `rng` enables dropout (training mode).
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        vars: &ParamVars,
        input: &ModelInput<T>,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<ForwardOutput> {
        self.check_input(input)?;
        let mut attention = Vec::new();
        let pooled = match input {
            ModelInput::Joint(graph) => self.pooled(tape, vars, graph, rng.as_deref_mut(), &mut attention)?,
            ModelInput::Split { text, visual } => {
                let v = self.pooled(tape, vars, visual, rng.as_deref_mut(), &mut attention)?;
                let t = self.pooled(tape, vars, text, rng.as_deref_mut(), &mut attention)?;
                tape.concat_cols(v, t)?
            }
        };
        let cls = ClassifierVars {
            w1: vars.get("cls.w1")?,
            b1: vars.get("cls.b1")?,
            w2: vars.get("cls.w2")?,
            b2: vars.get("cls.b2")?,
        };
        let logits = classify(tape, pooled, &cls, self.config.dropout, rng)?;
        Ok(ForwardOutput { logits, attention })
    }

    /// Records the mean cross-entropy of `logits` against `labels`.
    pub fn loss(&self, tape: &mut Tape<T>, logits: Var, labels: &[usize]) -> Result<Var> {
        let probs = tape.softmax_rows(logits)?;
        tape.nll(probs, labels, T::lit(PROB_FLOOR))
    }

    /// Evaluation-mode logits as a `g×n_classes` tensor.
    pub fn logits(&self, input: &ModelInput<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let vars = self.register_frozen(&mut tape);
        let out = self.forward(&mut tape, &vars, input, None)?;
        Ok(tape.value(out.logits).clone())
    }

    /// Evaluation-mode predictions, one per graph in the batch.
    pub fn predict(&self, input: &ModelInput<T>) -> Result<Vec<Prediction<T>>> {
        let logits = self.logits(input)?;
        Ok((0..logits.rows())
            .map(|r| Prediction::from_logits(logits.row(r).to_vec()))
            .collect())
    }

    fn register_frozen(&self, tape: &mut Tape<T>) -> ParamVars {
        let vars = self.params.tensors().map(|t| tape.constant(t.clone())).collect();
        self.params.vars_from(vars)
    }

    /// Mean loss over a batch and its gradient for every parameter, in
    /// canonical order.
    pub fn loss_and_grads(
        &self,
        input: &ModelInput<T>,
        labels: &[usize],
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(T, Vec<Tensor<T>>)> {
        let mut tape = Tape::new();
        let vars = self.params.register(&mut tape);
        let out = self.forward(&mut tape, &vars, input, rng)?;
        let loss = self.loss(&mut tape, out.logits, labels)?;
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::Numeric(format!("loss evaluated to {value}")));
        }
        let mut grads = tape.backward(loss)?;
        let grads = vars
            .all()
            .iter()
            .zip(self.params.tensors())
            .map(|(&v, t)| match grads.take(v) {
                Some(g) => g,
                None => Tensor::zeros(t.shape()).expect("parameter shape"),
            })
            .collect();
        Ok((value, grads))
    }
}
