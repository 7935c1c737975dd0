#![allow(dead_code)]
pub mod criteria;
pub mod enumerate;
pub mod naive_forest;
pub mod toy_hrg;
