pub mod dsl;
pub mod expr;
pub mod geometry;
pub mod integrability;
pub mod operator;
pub mod reduction;
pub mod sim;
pub mod symbol;
