pub mod coincidence;
pub mod delayline;
pub mod design_a;
pub mod design_b;
pub mod gates;
pub mod harness;
pub mod simkernel;
