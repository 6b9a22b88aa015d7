pub(crate) mod basic;
mod conv;
mod norm;
pub(crate) mod sample;
pub(crate) mod softmax;

pub(crate) use sample::taps;
pub(crate) use softmax::softmax_into;
