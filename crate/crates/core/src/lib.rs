//! Cross-market return forecasting on directed bipartite screening graphs.
//!
//! Two equity markets with non-overlapping trading sessions are linked by a
//! directed bipartite graph: a source stock points at a target stock when a
//! rolling-window regression of the target's returns on the source's lagged
//! returns has a t-statistic above a threshold. The selected sources feed a
//! family of forecasting models whose one-day-ahead predictions are scored by
//! a liquidity-capped PnL, annualized Sharpe ratios and nested quantile
//! portfolios.
//!
//! The crate is organized along the pipeline:
//!
//! - [`market_data`]: price panels, the CSV contract, returns, winsorization,
//!   universe selection and dollar-volume sizing inputs.
//! - [`calendar`]: trading calendars, session times and cross-calendar lag
//!   pairing.
//! - [`screening`]: pairwise t-statistics, graph construction, graph analytics
//!   and in-degree preserving edge randomization.
//! - [`models`]: OLS, LASSO, ridge, ε-SVR, XGBoost-style and histogram
//!   gradient boosting, random forests, AdaBoost.R2 and the two ensembles.
//! - [`backtest`]: the rolling train/predict/evaluate loop and its metrics.
//! - [`experiments`]: directional runs, baselines and sensitivity studies.
//! - [`synthetic`]: two-market generator with planted predictive structure.
//! - [`config`]: serializable run configuration and manifests.

pub mod backtest;
pub mod calendar;
pub mod config;
pub mod experiments;
pub mod market_data;
pub mod models;
pub mod rng;
pub mod screening;
pub mod stats;
pub mod synthetic;

mod par;

pub use backtest::{BacktestConfig, BacktestReport};
pub use calendar::{Session, TradingCalendar};
pub use market_data::{PricePanel, ReturnKind, ReturnPanel};
pub use models::{FittedModel, Method, ModelSpec, TrainSet};
pub use screening::{BipartiteGraph, PairStat, ScreenConfig};
pub use synthetic::PlantedSpec;
