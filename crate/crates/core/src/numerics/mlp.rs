use crate::error::{Error, Result};
use crate::numerics::{DenseTensor, GradTape, NodeId, ParamId, ParamStore, RngState, Scalar};

/// Dense layer stack with ReLU between layers (none after the last).
/// Weights are stored `in x out`, biases `1 x out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    widths: Vec<usize>,
    layers: Vec<(ParamId, ParamId)>,
}

impl Mlp {
    /// Registers fresh parameters for `widths = [in, hidden.., out]`.
    pub fn init<T: Scalar>(name: &str, widths: &[usize], store: &mut ParamStore<T>, rng: &mut RngState) -> Self {
        assert!(widths.len() >= 2, "an MLP needs input and output widths");
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let wid = store.insert_uniform(format!("{name}.{i}.weight"), vec![w[0], w[1]], w[0], rng);
                let bid = store.insert_uniform(format!("{name}.{i}.bias"), vec![1, w[1]], w[0], rng);
                (wid, bid)
            })
            .collect();
        Self {
            widths: widths.to_vec(),
            layers,
        }
    }

    /// Wraps parameters already present in `store`.
    pub fn from_params<T: Scalar>(layers: Vec<(ParamId, ParamId)>, store: &ParamStore<T>) -> Result<Self> {
        let mut widths = Vec::new();
        for (i, &(w, b)) in layers.iter().enumerate() {
            let ws = store.get(w).shape();
            let bs = store.get(b).shape();
            if ws.len() != 2 || bs != [1, ws[1]] {
                return Err(Error::dim("mlp layer", &[ws.first().copied().unwrap_or(0), 1], bs));
            }
            if i == 0 {
                widths.push(ws[0]);
            } else if widths[i] != ws[0] {
                return Err(Error::dim("mlp layer chain", &[widths[i]], &[ws[0]]));
            }
            widths.push(ws[1]);
        }
        if layers.is_empty() {
            return Err(Error::Config("empty MLP".into()));
        }
        Ok(Self { widths, layers })
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn layers(&self) -> &[(ParamId, ParamId)] {
        &self.layers
    }

    /// Records the forward pass of a `batch x in` node.
    pub fn forward<T: Scalar>(&self, tape: &mut GradTape<T>, store: &ParamStore<T>, x: NodeId) -> Result<NodeId> {
        let (rows, cols) = tape.shape(x);
        if cols != self.input_width() {
            return Err(Error::dim("mlp input", &[rows, self.input_width()], &[rows, cols]));
        }
        let mut h = x;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let wn = tape.param(store, w);
            let bn = tape.param(store, b);
            h = tape.matmul(h, wn)?;
            h = tape.add_bias(h, bn)?;
            if i + 1 < self.layers.len() {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }

    /// Untaped forward pass over the rows of `x` (last extent must match the input width).
    pub fn forward_values<T: Scalar>(&self, store: &ParamStore<T>, x: &DenseTensor<T>) -> Result<DenseTensor<T>> {
        if x.cols() != self.input_width() {
            let mut want = x.shape().to_vec();
            if let Some(last) = want.last_mut() {
                *last = self.input_width();
            }
            return Err(Error::dim("mlp input", &want, x.shape()));
        }
        let mut tape = GradTape::new();
        let xn = tape.constant(x.rows(), x.cols(), x.data().to_vec());
        let out = self.forward(&mut tape, store, xn)?;
        let mut shape = x.shape().to_vec();
        match shape.last_mut() {
            Some(last) => *last = self.output_width(),
            None => shape.push(self.output_width()),
        }
        DenseTensor::new(shape, tape.value(out).to_vec())
    }
}
