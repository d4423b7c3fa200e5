//! Kinematic 2D driving world: dynamics, tracking, maps, experts and incidents.

pub mod dynamics;
pub mod expert;
pub mod generate;
pub mod geometry;
pub mod incident;
pub mod io;
pub mod observation;
pub mod scenario;
pub mod state;

pub use dynamics::{step_dynamics, track_trajectory, SimulatorConfig, Tracker};
pub use expert::{synthesize_expert, DriverParams, ScenarioShell};
pub use generate::{generate_scenarios, ScenarioParams};
pub use geometry::{OrientedRect, Polygon, Polyline, Vec2};
pub use incident::{detect_incident, IncidentReport};
pub use observation::{Observation, ObservationConfig};
pub use scenario::{AgentTrack, MapGeometry, Scenario};
pub use state::{Action, AgentState, TrajectoryPlan, EGO_LENGTH, EGO_WIDTH};
