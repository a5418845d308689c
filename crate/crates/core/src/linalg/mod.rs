//! Dense and structured linear algebra kernels shared by the pipeline:
//! hermitian eigensolvers, sparse storage, bordered solves, FFT helpers.

pub mod csr;
pub mod dense;
pub mod fftutil;
pub mod hermeig;
pub mod lobpcg;
pub mod tridiag;

pub use csr::CsrMatrix;
pub use tridiag::SymTridiag;
