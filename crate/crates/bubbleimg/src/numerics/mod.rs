//! Numerical building blocks shared by the physics modules.

pub mod conv;
pub mod eigen;
pub mod gmres;
pub mod quad;
pub mod special;
pub mod vec3;
