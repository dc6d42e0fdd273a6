//! Dense `f64` tensors and a taped reverse-mode autodiff graph.
//!
//! ```
//! use mafn_tensor::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.variable(Tensor::vector(vec![1.0, 2.0]));
//! let xx = g.mul(x, x).unwrap();
//! let loss = g.sum(xx).unwrap();
//! g.backward(loss).unwrap();
//! assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0]);
//! ```

mod error;
pub mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use error::{IoError, Result, TensorError};
pub use graph::{Binary, Graph, Unary, Var};
pub use params::{ParamStore, PARAM_FORMAT_VERSION, PARAM_MAGIC};
pub use tensor::Tensor;
