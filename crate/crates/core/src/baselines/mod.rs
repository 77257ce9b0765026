//! Comparison models: linear regression on an aggregate covariate and a
//! lagged feed-forward network.

mod agg_lm;
mod lagged_net;

pub use agg_lm::{agg_lm_loocv, fit_agg_lm, AggLinearModel};
pub use lagged_net::{
    forecast_recursive, hstack, lagged_training_set, loss_and_gradient, make_lag_matrix, net_horizon_cv, predict_lagged_net,
    select_hidden, fit_lagged_net, Activation, HorizonCv, LaggedNetModel, Standardizer, TrainConfig,
};
