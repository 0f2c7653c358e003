pub mod numerics;
pub mod mesh;
pub mod conductivity;
pub mod operator;
pub mod elasticity;
pub mod scalarization;
pub mod stability;
