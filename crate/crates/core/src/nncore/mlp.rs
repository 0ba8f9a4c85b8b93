use super::{NnError, ParamStore, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

/// Layer widths (input first) and one activation per hidden layer. The
/// output layer is always linear.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    widths: Vec<usize>,
    activations: Vec<Activation>,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, activations: Vec<Activation>) -> Result<Self, NnError> {
        if widths.len() < 2 {
            return Err(NnError::InvalidSpec(
                "an MLP needs at least two widths".into(),
            ));
        }
        if widths.contains(&0) {
            return Err(NnError::InvalidSpec(format!("zero width in {widths:?}")));
        }
        if activations.len() != widths.len() - 2 {
            return Err(NnError::InvalidSpec(format!(
                "{} activations for {} hidden layers",
                activations.len(),
                widths.len() - 2
            )));
        }
        Ok(Self {
            widths,
            activations,
        })
    }

    /// ReLU on every hidden layer.
    pub fn relu(widths: Vec<usize>) -> Result<Self, NnError> {
        let hidden = widths.len().saturating_sub(2);
        Self::new(widths, vec![Activation::Relu; hidden])
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn layer_count(&self) -> usize {
        self.widths.len() - 1
    }

    /// `(name, shape)` of every weight and bias under `prefix`.
    pub fn parameter_shapes(&self, prefix: &str) -> Vec<(String, Vec<usize>)> {
        (0..self.layer_count())
            .flat_map(|l| {
                let (i, o) = (self.widths[l], self.widths[l + 1]);
                [
                    (weight_name(prefix, l), vec![i, o]),
                    (bias_name(prefix, l), vec![o]),
                ]
            })
            .collect()
    }
}

pub fn weight_name(prefix: &str, layer: usize) -> String {
    format!("{prefix}/w{}", layer + 1)
}

pub fn bias_name(prefix: &str, layer: usize) -> String {
    format!("{prefix}/b{}", layer + 1)
}

/// Output of [`mlp_forward`]; `activations` holds each layer's output.
#[derive(Debug, Clone)]
pub struct MlpTrace {
    pub output: Var,
    pub activations: Vec<Var>,
}

/// `y = Wₙ·σ(…σ(W₁x + b₁)…) + bₙ` applied row-wise to `input`.
pub fn mlp_forward(
    tape: &mut Tape,
    store: &ParamStore,
    prefix: &str,
    spec: &MlpSpec,
    input: Var,
) -> Result<MlpTrace, NnError> {
    let width = tape.value(input).cols();
    if width != spec.input_width() {
        return Err(NnError::ShapeMismatch(format!(
            "{prefix}: input width {width}, expected {}",
            spec.input_width()
        )));
    }
    let mut x = input;
    let mut activations = Vec::with_capacity(spec.layer_count());
    for l in 0..spec.layer_count() {
        let w = tape.param(store, &weight_name(prefix, l))?;
        let b = tape.param(store, &bias_name(prefix, l))?;
        let wv = tape.value(w);
        if wv.rows() != spec.widths[l] || wv.cols() != spec.widths[l + 1] {
            return Err(NnError::ShapeMismatch(format!(
                "{prefix} layer {}: stored weight {:?}",
                l + 1,
                wv.shape()
            )));
        }
        let z = tape.matmul(x, w)?;
        x = tape.add_bias(z, b)?;
        if l + 1 < spec.layer_count() && spec.activations[l] == Activation::Relu {
            x = tape.relu(x)?;
        }
        activations.push(x);
    }
    Ok(MlpTrace {
        output: x,
        activations,
    })
}
