pub mod inception;
pub mod lenet;
pub mod s4;
pub mod xresnet;
