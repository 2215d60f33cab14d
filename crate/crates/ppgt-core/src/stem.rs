//! Node and pair-feature stems that sit in front of the transformer blocks.
//!
//! The PE stem turns (sinusoidally expanded, degree-augmented) RRWP channels
//! into learned pair embeddings:
//! `Norm(FFN(... FFN(FC(e_ij) + MLP(SPE(p_ij)))))`, where the FFN blocks are
//! pre-norm residual blocks like the backbone's. The node stem seeds node
//! states from attributes, auxiliary features, and the diagonal of the raw
//! RRWP tensor: `x0_i = FC(x_i || aux_i) + FC(p_ii)`.

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::norm::{apply_token_norm, NormKind, NormParams};
use crate::pe::RelPosTensor;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// One pre-norm FFN block: `x + W2 relu(W1 Norm(x) + b1) + b2`.
#[derive(Debug, Clone)]
pub struct StemFfnBlock {
    pub norm: NormParams,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

#[derive(Debug, Clone)]
pub struct PeStemParams {
    /// Two-layer relu MLP over the expanded PE channels.
    pub mlp_w1: Tensor,
    pub mlp_b1: Tensor,
    pub mlp_w2: Tensor,
    pub mlp_b2: Tensor,
    /// Edge-attribute projection; absent when the graphs carry no edge
    /// attributes (the bias still applies, FC(0) = b).
    pub edge_w: Option<Tensor>,
    pub edge_b: Tensor,
    pub ffn: Vec<StemFfnBlock>,
    pub final_norm: NormParams,
}

impl PeStemParams {
    /// Hidden layers use Kaiming-uniform with a = 0, output and standalone
    /// layers a = 1; biases start at zero.
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        in_dim: usize,
        hidden: usize,
        d_pe: usize,
        edge_dim: Option<usize>,
        n_ffn: usize,
        expansion: usize,
        norm_kind: NormKind,
        rng: &mut Rng,
    ) -> PeStemParams {
        let mut r = rng.child("pe_stem");
        let ffn = (0..n_ffn)
            .map(|i| {
                let mut fr = r.child(&format!("ffn{i}"));
                StemFfnBlock {
                    norm: NormParams::new(norm_kind, d_pe),
                    w1: Tensor::kaiming_uniform(d_pe, expansion * d_pe, 0.0, &mut fr),
                    b1: Tensor::zeros(vec![expansion * d_pe]),
                    w2: Tensor::kaiming_uniform(expansion * d_pe, d_pe, 1.0, &mut fr),
                    b2: Tensor::zeros(vec![d_pe]),
                }
            })
            .collect();
        PeStemParams {
            mlp_w1: Tensor::kaiming_uniform(in_dim, hidden, 0.0, &mut r),
            mlp_b1: Tensor::zeros(vec![hidden]),
            mlp_w2: Tensor::kaiming_uniform(hidden, d_pe, 1.0, &mut r),
            mlp_b2: Tensor::zeros(vec![d_pe]),
            edge_w: edge_dim.map(|e| Tensor::kaiming_uniform(e, d_pe, 1.0, &mut r)),
            edge_b: Tensor::zeros(vec![d_pe]),
            ffn,
            final_norm: NormParams::new(norm_kind, d_pe),
        }
    }

    pub fn d_pe(&self) -> usize {
        self.mlp_w2.shape()[1]
    }

    pub fn in_dim(&self) -> usize {
        self.mlp_w1.shape()[0]
    }

    pub fn trainable(&self) -> Vec<(String, Tensor)> {
        let mut out = vec![
            ("pe_stem.mlp_w1".into(), self.mlp_w1.clone()),
            ("pe_stem.mlp_b1".into(), self.mlp_b1.clone()),
            ("pe_stem.mlp_w2".into(), self.mlp_w2.clone()),
            ("pe_stem.mlp_b2".into(), self.mlp_b2.clone()),
        ];
        if let Some(w) = &self.edge_w {
            out.push(("pe_stem.edge_w".into(), w.clone()));
        }
        out.push(("pe_stem.edge_b".into(), self.edge_b.clone()));
        for (i, block) in self.ffn.iter().enumerate() {
            for (name, t) in block.norm.trainable() {
                out.push((format!("pe_stem.ffn{i}.norm.{name}"), t));
            }
            out.push((format!("pe_stem.ffn{i}.w1"), block.w1.clone()));
            out.push((format!("pe_stem.ffn{i}.b1"), block.b1.clone()));
            out.push((format!("pe_stem.ffn{i}.w2"), block.w2.clone()));
            out.push((format!("pe_stem.ffn{i}.b2"), block.b2.clone()));
        }
        for (name, t) in self.final_norm.trainable() {
            out.push((format!("pe_stem.final_norm.{name}"), t));
        }
        out
    }

    pub fn set_trainable(&mut self, it: &mut std::vec::IntoIter<Tensor>) {
        self.mlp_w1 = it.next().expect("mlp_w1");
        self.mlp_b1 = it.next().expect("mlp_b1");
        self.mlp_w2 = it.next().expect("mlp_w2");
        self.mlp_b2 = it.next().expect("mlp_b2");
        if self.edge_w.is_some() {
            self.edge_w = Some(it.next().expect("edge_w"));
        }
        self.edge_b = it.next().expect("edge_b");
        for block in &mut self.ffn {
            let n = block.norm.trainable().len();
            let tensors: Vec<Tensor> = (0..n).map(|_| it.next().expect("norm")).collect();
            block.norm.set_trainable(&tensors);
            block.w1 = it.next().expect("w1");
            block.b1 = it.next().expect("b1");
            block.w2 = it.next().expect("w2");
            block.b2 = it.next().expect("b2");
        }
        let n = self.final_norm.trainable().len();
        let tensors: Vec<Tensor> = (0..n).map(|_| it.next().expect("norm")).collect();
        self.final_norm.set_trainable(&tensors);
    }
}

/// `[N*N, edge_dim]` matrix of per-pair edge attributes; zero rows where the
/// pair is not an observed edge.
fn edge_attr_matrix(g: &Graph, edge_dim: usize) -> Tensor {
    let n = g.n();
    let mut data = vec![0.0; n * n * edge_dim];
    if let Some(attrs) = g.edge_attrs() {
        for (&(u, v), a) in g.edges().iter().zip(attrs) {
            for (c, &val) in a.iter().enumerate() {
                data[(u * n + v) * edge_dim + c] = val;
                data[(v * n + u) * edge_dim + c] = val;
            }
        }
    }
    Tensor::from_vec(vec![n * n, edge_dim], data).expect("edge matrix shape")
}

fn ffn_block(x: &Tensor, block: &StemFfnBlock) -> Result<Tensor> {
    let inner = apply_token_norm(x, &block.norm)?
        .matmul(&block.w1)?
        .add(&block.b1)?
        .relu()
        .matmul(&block.w2)?
        .add(&block.b2)?;
    x.add(&inner)
}

/// PE stem forward pass. `p` is the (typically SPE-expanded and
/// degree-augmented) pair tensor; the output is one `d_pe`-dimensional
/// embedding per ordered pair, flattened to `[N*N, d_pe]`.
pub fn pe_stem_forward(p: &RelPosTensor, g: &Graph, params: &PeStemParams) -> Result<Tensor> {
    if p.k() != params.in_dim() {
        return Err(Error::DimMismatch {
            op: "pe_stem_forward",
            expected: params.in_dim(),
            got: p.k(),
        });
    }
    let base = p.as_matrix();
    let pe_term = base
        .matmul(&params.mlp_w1)?
        .add(&params.mlp_b1)?
        .relu()
        .matmul(&params.mlp_w2)?
        .add(&params.mlp_b2)?;
    let edge_term = match (&params.edge_w, g.edge_attrs()) {
        (Some(w), Some(_)) => edge_attr_matrix(g, w.shape()[0])
            .matmul(w)?
            .add(&params.edge_b)?,
        // No edge attributes: e' = 0, so FC(e') is just the bias.
        _ => params.edge_b.clone(),
    };
    let mut x = pe_term.add(&edge_term)?;
    for block in &params.ffn {
        x = ffn_block(&x, block)?;
    }
    apply_token_norm(&x, &params.final_norm)
}

#[derive(Debug, Clone)]
pub struct NodeStemParams {
    /// Attribute projection; absent for attribute-free graphs.
    pub w_attr: Option<Tensor>,
    pub w_aux: Tensor,
    pub b_x: Tensor,
    pub w_pe: Tensor,
    pub b_pe: Tensor,
}

impl NodeStemParams {
    pub fn init(
        attr_dim: Option<usize>,
        k: usize,
        model_dim: usize,
        rng: &mut Rng,
    ) -> NodeStemParams {
        let mut r = rng.child("node_stem");
        NodeStemParams {
            w_attr: attr_dim.map(|f| Tensor::kaiming_uniform(f, model_dim, 1.0, &mut r)),
            w_aux: Tensor::kaiming_uniform(2, model_dim, 1.0, &mut r),
            b_x: Tensor::zeros(vec![model_dim]),
            w_pe: Tensor::kaiming_uniform(k, model_dim, 1.0, &mut r),
            b_pe: Tensor::zeros(vec![model_dim]),
        }
    }

    pub fn trainable(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        if let Some(w) = &self.w_attr {
            out.push(("node_stem.w_attr".into(), w.clone()));
        }
        out.push(("node_stem.w_aux".into(), self.w_aux.clone()));
        out.push(("node_stem.b_x".into(), self.b_x.clone()));
        out.push(("node_stem.w_pe".into(), self.w_pe.clone()));
        out.push(("node_stem.b_pe".into(), self.b_pe.clone()));
        out
    }

    pub fn set_trainable(&mut self, it: &mut std::vec::IntoIter<Tensor>) {
        if self.w_attr.is_some() {
            self.w_attr = Some(it.next().expect("w_attr"));
        }
        self.w_aux = it.next().expect("w_aux");
        self.b_x = it.next().expect("b_x");
        self.w_pe = it.next().expect("w_pe");
        self.b_pe = it.next().expect("b_pe");
    }
}

/// Node stem: `x0_i = FC(x_i || aux_i) + FC(p_ii)`. The concatenated FC is
/// realized as a sum of per-part projections sharing one bias; missing node
/// attributes contribute nothing.
pub fn node_stem_forward(
    node_attrs: Option<&Tensor>,
    p_raw: &RelPosTensor,
    node_aux: &Tensor,
    params: &NodeStemParams,
) -> Result<Tensor> {
    if p_raw.k() != params.w_pe.shape()[0] {
        return Err(Error::DimMismatch {
            op: "node_stem_forward",
            expected: params.w_pe.shape()[0],
            got: p_raw.k(),
        });
    }
    let mut x_part = node_aux.matmul(&params.w_aux)?.add(&params.b_x)?;
    if let (Some(attrs), Some(w)) = (node_attrs, &params.w_attr) {
        x_part = x_part.add(&attrs.matmul(w)?)?;
    }
    let pe_part = p_raw.diagonal().matmul(&params.w_pe)?.add(&params.b_pe)?;
    x_part.add(&pe_part)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{cycle, Graph};
    use crate::pe::{inject_aux_features, rrwp, spe_encode};

    fn stem_inputs(g: &Graph, k: usize, s: usize) -> (RelPosTensor, Tensor, RelPosTensor) {
        let raw = rrwp(g, k);
        let (aux, p_aug) = inject_aux_features(g, &spe_encode(&raw, s));
        (raw, aux, p_aug)
    }

    #[test]
    fn zero_weights_final_bias_gives_constant_output() {
        let g = cycle(5);
        let (_, _, p_aug) = stem_inputs(&g, 3, 1);
        let mut rng = Rng::seed(3);
        let mut params = PeStemParams::init(
            p_aug.k(),
            8,
            4,
            None,
            0,
            2,
            NormKind::Adarmsn,
            &mut rng,
        );
        params.mlp_w1 = Tensor::zeros(vec![p_aug.k(), 8]);
        params.mlp_w2 = Tensor::zeros(vec![8, 4]);
        params.mlp_b2 = Tensor::from_vec(vec![4], vec![0.5, -1.0, 2.0, 0.25]).unwrap();
        let out = pe_stem_forward(&p_aug, &g, &params).unwrap();
        // Every pair sees the same constant pre-norm value, so the
        // normalized output is one constant row.
        let first = &out.data()[..4];
        for r in 1..g.n() * g.n() {
            assert_eq!(&out.data()[r * 4..(r + 1) * 4], first);
        }
    }

    #[test]
    fn no_ffn_blocks_is_norm_of_fc_plus_mlp() {
        let g = cycle(4);
        let (_, _, p_aug) = stem_inputs(&g, 2, 0);
        let mut rng = Rng::seed(4);
        let params = PeStemParams::init(p_aug.k(), 6, 4, None, 0, 2, NormKind::Rmsn, &mut rng);
        let out = pe_stem_forward(&p_aug, &g, &params).unwrap();
        let by_hand = {
            let h = p_aug
                .as_matrix()
                .matmul(&params.mlp_w1)
                .unwrap()
                .add(&params.mlp_b1)
                .unwrap()
                .relu()
                .matmul(&params.mlp_w2)
                .unwrap()
                .add(&params.mlp_b2)
                .unwrap()
                .add(&params.edge_b)
                .unwrap();
            apply_token_norm(&h, &params.final_norm).unwrap()
        };
        assert_eq!(out.data(), by_hand.data());
    }

    #[test]
    fn edge_attrs_flow_through_the_edge_fc() {
        let g = Graph::new(3, &[(0, 1)])
            .unwrap()
            .with_edge_attrs(vec![vec![2.0]])
            .unwrap();
        let (_, _, p_aug) = stem_inputs(&g, 2, 0);
        let mut rng = Rng::seed(5);
        let params = PeStemParams::init(
            p_aug.k(),
            4,
            3,
            Some(1),
            0,
            2,
            NormKind::Rmsn,
            &mut rng,
        );
        // The (0,1) and (1,0) rows must differ from the (0,2) row purely via
        // the edge term once we zero the PE branch.
        let mut p = params.clone();
        p.mlp_w1 = Tensor::zeros(vec![p_aug.k(), 4]);
        p.mlp_w2 = Tensor::zeros(vec![4, 3]);
        let out = pe_stem_forward(&p_aug, &g, &p).unwrap();
        let n = 3;
        let row = |i: usize, j: usize| &out.data()[(i * n + j) * 3..(i * n + j + 1) * 3];
        assert_eq!(row(0, 1), row(1, 0));
        assert_ne!(row(0, 1), row(0, 2));
    }

    #[test]
    fn stem_gradcheck_on_small_graph() {
        let g = cycle(4);
        let (_, _, p_aug) = stem_inputs(&g, 3, 1);
        let mut rng = Rng::seed(6);
        let params = PeStemParams::init(
            p_aug.k(),
            6,
            4,
            None,
            1,
            2,
            NormKind::Adarmsn,
            &mut rng,
        );
        // Check gradients with respect to the first MLP weight.
        let w0 = params.mlp_w1.clone();
        let err = crate::tensor::grad_check(
            |w| {
                let mut p = params.clone();
                p.mlp_w1 = w.clone();
                Ok(pe_stem_forward(&p_aug, &g, &p)?.square().sum_all())
            },
            &w0,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn node_stem_without_attrs_and_zero_aux_tracks_the_diagonal() {
        let g = cycle(6);
        let (raw, aux, _) = stem_inputs(&g, 3, 0);
        let mut rng = Rng::seed(7);
        let mut params = NodeStemParams::init(None, 3, 5, &mut rng);
        params.w_aux = Tensor::zeros(vec![2, 5]);
        params.b_x = Tensor::zeros(vec![5]);
        let out = node_stem_forward(None, &raw, &aux, &params).unwrap();
        let by_hand = raw.diagonal().matmul(&params.w_pe).unwrap().add(&params.b_pe).unwrap();
        assert_eq!(out.data(), by_hand.data());
    }

    #[test]
    fn vertex_transitive_graph_gives_identical_node_states() {
        let g = cycle(5);
        let (raw, aux, _) = stem_inputs(&g, 4, 0);
        let mut rng = Rng::seed(8);
        let params = NodeStemParams::init(None, 4, 6, &mut rng);
        let out = node_stem_forward(None, &raw, &aux, &params).unwrap();
        let first = &out.data()[..6];
        for v in 1..5 {
            for c in 0..6 {
                assert!((out.data()[v * 6 + c] - first[c]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn node_stem_gradcheck() {
        let g = crate::graph::path(4);
        let (raw, aux, _) = stem_inputs(&g, 3, 0);
        let mut rng = Rng::seed(9);
        let params = NodeStemParams::init(None, 3, 5, &mut rng);
        let w0 = params.w_pe.clone();
        let err = crate::tensor::grad_check(
            |w| {
                let mut p = params.clone();
                p.w_pe = w.clone();
                Ok(node_stem_forward(None, &raw, &aux, &p)?.square().sum_all())
            },
            &w0,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let g = cycle(4);
        let (raw, aux, p_aug) = stem_inputs(&g, 3, 1);
        let mut rng = Rng::seed(10);
        let pe_params = PeStemParams::init(99, 6, 4, None, 0, 2, NormKind::Rmsn, &mut rng);
        assert!(pe_stem_forward(&p_aug, &g, &pe_params).is_err());
        let node_params = NodeStemParams::init(None, 7, 5, &mut rng);
        assert!(node_stem_forward(None, &raw, &aux, &node_params).is_err());
    }
}
