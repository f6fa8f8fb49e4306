//! Market side: price series, robust reserve bidding and activation signals.

mod activation;
mod bid;
mod prices;

pub use activation::{generate_activation, request, utilization_rate, ActivationParams, ActivationSignal, ActivationStep};
pub use bid::{bid_reserves, cumulative, verify_bid, worst_case_paths, ReserveBid, CERTIFICATE_TOL};
pub use prices::{load_prices, synth_prices, PriceSeries, IMBALANCE_FACTOR, INTRADAY_FEE, PRICE_COLUMNS};
