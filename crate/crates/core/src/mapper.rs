//! Graph extraction, design-rule checks and placement onto the hardware
//! neuron populations.
//!
//! The target has one input population (dense `w_in`), one hidden population
//! with a recurrent weight matrix `w_rec`, and a readout population fed by a
//! dense `w_out`. A feed-forward chain is embedded by placing hidden layers
//! contiguously and writing each inter-layer matrix as a block of `w_rec`:
//!
//! ```text
//!            cols: L1      L2      L3
//! w_rec  L1 [  0    |  W2   |  0   ]
//!        L2 [  0    |  0    |  W3  ]
//!        L3 [  0    |  0    |  0   ]
//! ```
//!
//! Layer `k` therefore runs `k − 1` steps behind its layered counterpart.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::lif::{LifKernel, LifParams, LifState};
use crate::matrix::Matrix;
use crate::network::{Layer, LayerTrace, NetworkSpec};
use crate::raster::EventRaster;

pub const MAPPED_SCHEMA_VERSION: u32 = 1;

/// Resource limits of the target core.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct HardwareLimits {
    pub max_hidden_neurons: usize,
    pub n_input_channels: usize,
    pub n_output_neurons: usize,
    pub max_fanout_per_hidden: usize,
    pub max_synapse_states_per_neuron: usize,
    /// Weights are signed integers of magnitude at most `2^(weight_bits−1)`.
    pub weight_bits: u32,
    pub state_bits: u32,
    pub max_spikes_per_step: u32,
}

impl Default for HardwareLimits {
    fn default() -> Self {
        Self {
            max_hidden_neurons: 1000,
            n_input_channels: 16,
            n_output_neurons: 8,
            max_fanout_per_hidden: 32,
            max_synapse_states_per_neuron: 2,
            weight_bits: 8,
            state_bits: 16,
            max_spikes_per_step: 31,
        }
    }
}

impl HardwareLimits {
    /// Largest representable weight magnitude (128 for 8 bits).
    pub fn weight_max(&self) -> i64 {
        1i64 << (self.weight_bits - 1)
    }

    pub fn state_min(&self) -> i64 {
        -(1i64 << (self.state_bits - 1))
    }

    pub fn state_max(&self) -> i64 {
        (1i64 << (self.state_bits - 1)) - 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    HiddenCount,
    InputChannels,
    OutputNeurons,
    FanOut,
    SynapseStates,
    /// The graph must be an acyclic chain that reaches the readout through at
    /// least one hidden layer.
    Topology,
    WeightRange,
    StateRange,
    SpikeCap,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Rule::HiddenCount => "hidden-count",
            Rule::InputChannels => "input-channels",
            Rule::OutputNeurons => "output-neurons",
            Rule::FanOut => "fan-out",
            Rule::SynapseStates => "synapse-states",
            Rule::Topology => "topology",
            Rule::WeightRange => "weight-range",
            Rule::StateRange => "state-range",
            Rule::SpikeCap => "spike-cap",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub rule: Rule,
    pub node: String,
    pub measured: i64,
    pub allowed: i64,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {}: measured {}, allowed {}",
            self.rule, self.node, self.measured, self.allowed
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Node {
    Weights {
        name: String,
        weights: Matrix,
    },
    Lif {
        name: String,
        params: LifParams,
        /// Synaptic input states each neuron needs.
        synapse_states: usize,
    },
}

impl Node {
    pub fn name(&self) -> &str {
        match self {
            Node::Weights { name, .. } | Node::Lif { name, .. } => name,
        }
    }
}

/// Computational graph: nodes plus directed dataflow edges.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    pub input_dim: usize,
    pub nodes: Vec<Node>,
    pub edges: Vec<(usize, usize)>,
}

/// Turns a layered network into an alternating weight/LIF chain.
pub fn extract_graph(net: &NetworkSpec) -> Result<Graph> {
    if net.layers.is_empty() {
        return Err(Error::invalid("cannot extract a graph from an empty network"));
    }
    net.validate()?;
    let mut nodes = Vec::with_capacity(net.layers.len() * 2);
    for (i, layer) in net.layers.iter().enumerate() {
        nodes.push(Node::Weights {
            name: format!("weights{i}"),
            weights: layer.weights.clone(),
        });
        nodes.push(Node::Lif {
            name: format!("lif{i}"),
            params: layer.lif.clone(),
            synapse_states: 1,
        });
    }
    let edges = (1..nodes.len()).map(|i| (i - 1, i)).collect();
    Ok(Graph {
        input_dim: net.input_dim,
        nodes,
        edges,
    })
}

impl Graph {
    /// Reads the chain back into `(weights, lif)` layers. Fails on anything
    /// that is not a simple alternating chain with consistent dimensions.
    pub fn layers(&self) -> Result<Vec<Layer>> {
        let chain_edges = (1..self.nodes.len()).map(|i| (i - 1, i));
        if self.nodes.is_empty() || !self.nodes.len().is_multiple_of(2) || !self.edges.iter().copied().eq(chain_edges) {
            return Err(Error::invalid("graph is not a weight/LIF chain"));
        }
        let mut layers = Vec::new();
        let mut dim = self.input_dim;
        for pair in self.nodes.chunks_exact(2) {
            match pair {
                [Node::Weights { weights, name }, Node::Lif { params, .. }] => {
                    if weights.rows() != dim || weights.cols() != params.len() {
                        return Err(Error::invalid(format!("dangling dimensions at node {name}")));
                    }
                    dim = weights.cols();
                    layers.push(Layer {
                        weights: weights.clone(),
                        lif: params.clone(),
                    });
                }
                _ => return Err(Error::invalid("graph nodes do not alternate weights/LIF")),
            }
        }
        Ok(layers)
    }

    /// Rebuilds a layered network from the graph.
    pub fn to_network(&self) -> Result<NetworkSpec> {
        NetworkSpec::new(self.input_dim, self.layers()?)
    }

    fn has_cycle(&self) -> bool {
        let n = self.nodes.len();
        let mut indeg = vec![0usize; n];
        for &(_, b) in &self.edges {
            if b < n {
                indeg[b] += 1;
            }
        }
        let mut stack: Vec<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut seen = 0;
        while let Some(i) = stack.pop() {
            seen += 1;
            for &(a, b) in &self.edges {
                if a == i && b < n {
                    indeg[b] -= 1;
                    if indeg[b] == 0 {
                        stack.push(b);
                    }
                }
            }
        }
        seen != n
    }
}

/// Checks `graph` against `limits`. An empty list means the graph can be
/// mapped.
pub fn drc_check(graph: &Graph, limits: &HardwareLimits) -> Vec<Violation> {
    let mut out = Vec::new();
    let push = |out: &mut Vec<Violation>, rule, node: &str, measured: usize, allowed: usize| {
        out.push(Violation {
            rule,
            node: node.to_string(),
            measured: measured as i64,
            allowed: allowed as i64,
        })
    };

    if graph.has_cycle() {
        push(&mut out, Rule::Topology, "graph", 1, 0);
        return out;
    }
    let layers = match graph.layers() {
        Ok(l) => l,
        Err(e) => {
            out.push(Violation {
                rule: Rule::Topology,
                node: e.to_string(),
                measured: graph.nodes.len() as i64,
                allowed: 0,
            });
            return out;
        }
    };
    if layers.len() < 2 {
        push(&mut out, Rule::Topology, "readout without hidden layer", 0, 1);
    }

    if graph.input_dim > limits.n_input_channels {
        push(&mut out, Rule::InputChannels, "input", graph.input_dim, limits.n_input_channels);
    }
    let readout = layers.last().expect("chain has layers").out_dim();
    if readout > limits.n_output_neurons {
        push(&mut out, Rule::OutputNeurons, "readout", readout, limits.n_output_neurons);
    }
    let hidden: usize = layers[..layers.len() - 1].iter().map(Layer::out_dim).sum();
    if hidden > limits.max_hidden_neurons {
        push(&mut out, Rule::HiddenCount, "hidden", hidden, limits.max_hidden_neurons);
    }

    // Fan-out only counts hidden→hidden edges, i.e. the rows of every
    // inter-hidden weight block that end up in w_rec.
    let n_layers = layers.len();
    for (i, layer) in layers.iter().enumerate().skip(1).take(n_layers.saturating_sub(2)) {
        let widest = (0..layer.in_dim()).map(|r| layer.weights.row_nnz(r)).max().unwrap_or(0);
        if widest > limits.max_fanout_per_hidden {
            push(
                &mut out,
                Rule::FanOut,
                &format!("lif{}", i - 1),
                widest,
                limits.max_fanout_per_hidden,
            );
        }
    }
    for node in &graph.nodes {
        if let Node::Lif {
            name,
            synapse_states,
            ..
        } = node
        {
            if *synapse_states > limits.max_synapse_states_per_neuron {
                push(
                    &mut out,
                    Rule::SynapseStates,
                    name,
                    *synapse_states,
                    limits.max_synapse_states_per_neuron,
                );
            }
        }
    }
    out
}

/// Where a layer-local neuron was placed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeuronId {
    pub layer: usize,
    pub index: usize,
    /// Index into the hidden population, or the output slot for the readout.
    pub hw_id: usize,
    pub readout: bool,
}

/// A placed float network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MappedSpec {
    pub version: u32,
    pub dt: f64,
    /// `n_input × H`.
    pub w_in: Matrix,
    /// `H × H`, block super-diagonal for a feed-forward source.
    pub w_rec: Matrix,
    /// `H × n_readout`.
    pub w_out: Matrix,
    pub hidden: LifParams,
    pub readout: LifParams,
    pub ids: Vec<NeuronId>,
    /// Hidden-layer sizes in placement order.
    pub hidden_layer_sizes: Vec<usize>,
}

impl MappedSpec {
    pub fn n_input(&self) -> usize {
        self.w_in.rows()
    }

    pub fn n_hidden(&self) -> usize {
        self.w_rec.rows()
    }

    pub fn n_readout(&self) -> usize {
        self.w_out.cols()
    }

    /// Steps by which the readout lags the layered simulation.
    pub fn readout_delay(&self) -> usize {
        self.hidden_layer_sizes.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != MAPPED_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: self.version,
                expected: MAPPED_SCHEMA_VERSION,
            });
        }
        let h = self.n_hidden();
        check_len("w_in columns", h, self.w_in.cols())?;
        check_len("w_rec columns", h, self.w_rec.cols())?;
        check_len("w_out rows", h, self.w_out.rows())?;
        check_len("hidden parameters", h, self.hidden.len())?;
        check_len("readout parameters", self.n_readout(), self.readout.len())?;
        check_len("hidden layer sizes", h, self.hidden_layer_sizes.iter().sum())?;
        check_len("id table", h + self.n_readout(), self.ids.len())?;
        self.hidden.validate()?;
        self.readout.validate()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Runtime(format!("serializing mapped spec: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: MappedSpec = toml::from_str(text).map_err(|e| Error::Parse {
            line: 0,
            msg: e.to_string(),
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Format {
            path: path.into(),
            msg: e.to_string(),
        })
    }

    /// Float simulation of the placed network with the hardware schedule:
    /// hidden neurons receive input events plus the previous step's hidden
    /// spikes through `w_rec`; the readout sees the current step's hidden
    /// spikes. Returns the readout raster and, if requested, the hidden and
    /// readout traces.
    pub fn simulate_float(&self, input: &EventRaster, record: bool) -> Result<(EventRaster, Option<[LayerTrace; 2]>)> {
        self.validate()?;
        check_len("input raster channels", self.n_input(), input.channels())?;
        let h = self.n_hidden();
        let hk: LifKernel = self.hidden.kernel();
        let rk: LifKernel = self.readout.kernel();
        let mut hs = LifState::zeros(h);
        let mut rs = LifState::zeros(self.n_readout());
        let mut prev = vec![0.0; h];
        let mut cur = vec![0.0; h];
        let mut rspk = vec![0.0; self.n_readout()];
        let mut x = vec![0.0; self.n_input()];
        let mut acc = vec![0.0; h];
        let mut rec_acc = vec![0.0; h];
        let mut racc = vec![0.0; self.n_readout()];
        let mut traces = record.then(|| [LayerTrace { neurons: h, ..Default::default() }, LayerTrace { neurons: self.n_readout(), ..Default::default() }]);
        let mut out = EventRaster::zeros(input.timesteps(), self.n_readout(), input.dt());
        for t in 0..input.timesteps() {
            for (xi, &c) in x.iter_mut().zip(input.row(t)) {
                *xi = f64::from(c);
            }
            self.w_in.transpose_mul_into(&x, &mut acc);
            self.w_rec.transpose_mul_into(&prev, &mut rec_acc);
            for (a, r) in acc.iter_mut().zip(&rec_acc) {
                *a += r;
            }
            hk.step(&mut hs, &acc, &mut cur);
            self.w_out.transpose_mul_into(&cur, &mut racc);
            rk.step(&mut rs, &racc, &mut rspk);
            if let Some([ht, rt]) = traces.as_mut() {
                ht.i_syn.extend_from_slice(&hs.i_syn);
                ht.v_mem.extend_from_slice(&hs.v_mem);
                ht.spikes.extend_from_slice(&cur);
                rt.i_syn.extend_from_slice(&rs.i_syn);
                rt.v_mem.extend_from_slice(&rs.v_mem);
                rt.spikes.extend_from_slice(&rspk);
            }
            for (o, &s) in out.row_mut(t).iter_mut().zip(&rspk) {
                *o = s.min(f64::from(u32::MAX)) as u32;
            }
            std::mem::swap(&mut prev, &mut cur);
        }
        Ok((out, traces))
    }
}

/// Places a DRC-clean graph onto the hardware populations.
pub fn map(graph: &Graph, limits: &HardwareLimits) -> Result<MappedSpec> {
    let violations = drc_check(graph, limits);
    if !violations.is_empty() {
        return Err(Error::Drc(violations));
    }
    let layers = graph.layers()?;
    let (readout, hidden_layers) = layers.split_last().expect("drc guarantees layers");
    let sizes: Vec<usize> = hidden_layers.iter().map(Layer::out_dim).collect();
    let h: usize = sizes.iter().sum();
    let offsets: Vec<usize> = sizes
        .iter()
        .scan(0, |acc, &s| {
            let o = *acc;
            *acc += s;
            Some(o)
        })
        .collect();
    let dt = readout.lif.dt;

    let first = &hidden_layers[0];
    let mut w_in = Matrix::zeros(graph.input_dim, h);
    for r in 0..first.in_dim() {
        w_in.row_mut(r)[..first.out_dim()].copy_from_slice(first.weights.row(r));
    }

    let mut w_rec = Matrix::zeros(h, h);
    for k in 1..hidden_layers.len() {
        let (src, dst) = (offsets[k - 1], offsets[k]);
        let w = &hidden_layers[k].weights;
        for r in 0..w.rows() {
            w_rec.row_mut(src + r)[dst..dst + w.cols()].copy_from_slice(w.row(r));
        }
    }

    let last = *offsets.last().unwrap();
    let mut w_out = Matrix::zeros(h, readout.out_dim());
    for r in 0..readout.in_dim() {
        w_out.row_mut(last + r).copy_from_slice(readout.weights.row(r));
    }

    let mut hidden = LifParams {
        tau_syn: Vec::with_capacity(h),
        tau_mem: Vec::with_capacity(h),
        threshold: Vec::with_capacity(h),
        bias: Vec::with_capacity(h),
        dt,
        max_spikes: hidden_layers[0].lif.max_spikes,
    };
    let mut ids = Vec::with_capacity(h + readout.out_dim());
    for (k, layer) in hidden_layers.iter().enumerate() {
        hidden.tau_syn.extend_from_slice(&layer.lif.tau_syn);
        hidden.tau_mem.extend_from_slice(&layer.lif.tau_mem);
        hidden.threshold.extend_from_slice(&layer.lif.threshold);
        hidden.bias.extend_from_slice(&layer.lif.bias);
        ids.extend((0..layer.out_dim()).map(|i| NeuronId {
            layer: k,
            index: i,
            hw_id: offsets[k] + i,
            readout: false,
        }));
    }
    ids.extend((0..readout.out_dim()).map(|i| NeuronId {
        layer: hidden_layers.len(),
        index: i,
        hw_id: i,
        readout: true,
    }));

    let spec = MappedSpec {
        version: MAPPED_SCHEMA_VERSION,
        dt,
        w_in,
        w_rec,
        w_out,
        hidden,
        readout: readout.lif.clone(),
        ids,
        hidden_layer_sizes: sizes,
    };
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_pyramid_net, PyramidConfig};

    fn dense(input: usize, sizes: &[usize]) -> NetworkSpec {
        let mut layers = Vec::new();
        let mut fan_in = input;
        for &n in sizes {
            layers.push(Layer {
                weights: Matrix::from_fn(fan_in, n, |r, c| 0.01 + (r * 7 + c) as f64 * 1e-3),
                lif: LifParams::uniform(n, 2e-3, 2e-3, 1.0, 1e-3),
            });
            fan_in = n;
        }
        NetworkSpec::new(input, layers).unwrap()
    }

    fn rules(net: &NetworkSpec) -> Vec<Rule> {
        drc_check(&extract_graph(net).unwrap(), &HardwareLimits::default())
            .into_iter()
            .map(|v| v.rule)
            .collect()
    }

    #[test]
    fn pyramid_graph_is_a_chain_of_eight_nodes() {
        let net = build_pyramid_net(&PyramidConfig::default()).unwrap();
        let g = extract_graph(&net).unwrap();
        assert_eq!(g.nodes.len(), 8);
        let kinds: Vec<bool> = g.nodes.iter().map(|n| matches!(n, Node::Weights { .. })).collect();
        assert_eq!(kinds, [true, false, true, false, true, false, true, false]);
        assert_eq!(g.to_network().unwrap(), net);
        assert!(drc_check(&g, &HardwareLimits::default()).is_empty());
    }

    #[test]
    fn each_limit_triggers_only_its_rule() {
        assert_eq!(rules(&dense(16, &[1001, 4])), vec![Rule::HiddenCount]);
        assert_eq!(rules(&dense(17, &[24, 4])), vec![Rule::InputChannels]);
        assert_eq!(rules(&dense(16, &[24, 9])), vec![Rule::OutputNeurons]);
        assert_eq!(rules(&dense(16, &[24, 33, 4])), vec![Rule::FanOut]);
        assert_eq!(rules(&dense(16, &[24, 32, 4])), Vec::<Rule>::new());
        assert_eq!(rules(&dense(16, &[4])), vec![Rule::Topology]);
    }

    #[test]
    fn fanout_counts_nonzero_targets_only() {
        let mut net = dense(16, &[24, 40, 4]);
        for r in 0..24 {
            for c in 32..40 {
                net.layers[1].weights.set(r, c, 0.0);
            }
        }
        assert!(rules(&net).is_empty());
    }

    #[test]
    fn synapse_state_and_cycle_rules() {
        let net = dense(16, &[24, 4]);
        let mut g = extract_graph(&net).unwrap();
        if let Node::Lif { synapse_states, .. } = &mut g.nodes[1] {
            *synapse_states = 3;
        }
        let v = drc_check(&g, &HardwareLimits::default());
        assert_eq!(v.len(), 1);
        assert_eq!((v[0].rule, v[0].measured, v[0].allowed), (Rule::SynapseStates, 3, 2));

        let mut g = extract_graph(&net).unwrap();
        g.edges.push((3, 0));
        let v = drc_check(&g, &HardwareLimits::default());
        assert_eq!(v.iter().map(|v| v.rule).collect::<Vec<_>>(), vec![Rule::Topology]);
    }

    #[test]
    fn empty_net_has_no_graph() {
        let net = NetworkSpec {
            version: 1,
            input_dim: 16,
            layers: vec![],
        };
        assert!(extract_graph(&net).is_err());
    }

    #[test]
    fn map_refuses_drc_failures() {
        let g = extract_graph(&dense(16, &[1001, 4])).unwrap();
        match map(&g, &HardwareLimits::default()) {
            Err(Error::Drc(v)) => assert_eq!(v[0].rule, Rule::HiddenCount),
            other => panic!("expected DRC error, got {other:?}"),
        }
        let g = extract_graph(&dense(16, &[4])).unwrap();
        assert!(matches!(map(&g, &HardwareLimits::default()), Err(Error::Drc(_))));
    }

    #[test]
    fn pyramid_blocks_land_on_the_superdiagonal() {
        let net = build_pyramid_net(&PyramidConfig::default()).unwrap();
        let m = map(&extract_graph(&net).unwrap(), &HardwareLimits::default()).unwrap();
        assert_eq!((m.n_input(), m.n_hidden(), m.n_readout()), (16, 72, 4));
        assert_eq!(m.n_hidden() + m.n_readout(), 76);
        for r in 0..72 {
            for c in 0..72 {
                let in_block = (r < 24 && (24..48).contains(&c)) || ((24..48).contains(&r) && (48..72).contains(&c));
                let w = m.w_rec.get(r, c);
                assert_eq!(w != 0.0, in_block, "w_rec[{r},{c}] = {w}");
            }
        }
        assert_eq!(m.w_rec.get(3, 24 + 5), net.layers[1].weights.get(3, 5));
        assert_eq!(m.w_rec.get(24 + 2, 48 + 7), net.layers[2].weights.get(2, 7));
        for r in 0..16 {
            for c in 0..72 {
                assert_eq!(m.w_in.get(r, c) != 0.0, c < 24);
            }
        }
        for r in 0..72 {
            assert_eq!(m.w_out.row_nnz(r) > 0, r >= 48);
        }
        let mut hw: Vec<usize> = m.ids.iter().filter(|i| !i.readout).map(|i| i.hw_id).collect();
        hw.sort_unstable();
        assert_eq!(hw, (0..72).collect::<Vec<_>>());
        assert_eq!(m.readout_delay(), 2);
        assert_eq!(MappedSpec::from_toml(&m.to_toml().unwrap()).unwrap(), m);
    }
}
