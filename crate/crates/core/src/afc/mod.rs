//! Smart-card records to OD tensors, flow series and training samples.

mod extract;
mod grid;
mod record;
mod samples;
mod scaler;

pub use extract::{extract_flows, extract_od, ingest, FlowSeries, IngestReport, Ingested, OdTensor, OutflowConvention};
pub use grid::{Manifest, TimeGrid};
pub use record::{format_timestamp, parse_afc, parse_timestamp, write_afc, AfcRecord, ParseOutcome, RejectedRow, AFC_HEADER};
pub use samples::{build_samples, fit_scalers, split_train_val_test, test_day_range, Sample, Scalers, Split, SplitConfig};
pub use scaler::MinMaxScaler;
