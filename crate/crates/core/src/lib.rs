//! Neural networks that process neural networks.
//!
//! A host network receives a frozen target network `G` as an argument and
//! interacts with it only by querying it: each of its phases emits probe
//! inputs, reads `G` at those points, and passes the (read, probe) pairs on.
//! Because every read is recorded on a reverse-mode [`autodiff::Graph`], the
//! host trains end to end through `G`.
//!
//! Two training setups are provided in [`training`]:
//!
//! - inverse: given `y = G(x)` and `G`, produce a preimage of `y`;
//! - compression: encode `G` into a code shorter than its parameter count,
//!   from which a meta-parameterized decoder reproduces `G(x)`.
//!
//! ```
//! use nnpnn::autodiff::Graph;
//! use nnpnn::config::RunConfig;
//! use nnpnn::host::NnpnnParams;
//! use nnpnn::networks::{generate_nn, NetTemplate};
//! use nnpnn::rng::Rng;
//!
//! let mut rng = Rng::new(7);
//! let target = generate_nn(&mut rng, &NetTemplate::default()).unwrap();
//! let host = NnpnnParams::init(RunConfig::default().host_config(), &mut rng).unwrap();
//!
//! let mut g = Graph::new();
//! let y = g.input(target.eval(&[1.0, -2.0]).unwrap()).unwrap();
//! let (guess, trace) = host.forward(&mut g, None, Some(y), &target).unwrap();
//! assert_eq!(g.value(guess).len(), 2);
//! assert_eq!(trace.queries.len(), 2 * 4);
//! ```

pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod gradcheck;
pub mod hexfloat;
pub mod host;
pub mod layout;
pub mod metrics;
pub mod networks;
pub mod precise;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
