pub mod bagdata;
pub mod clustering;
pub mod container;
pub mod diffcore;
pub mod loss;
pub mod model;
pub mod rng;
pub mod trainer;
