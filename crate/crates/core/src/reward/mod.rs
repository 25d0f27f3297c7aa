//! Learned reward: networks, ensemble, and the Bradley-Terry preference model.

mod ensemble;
mod net;
mod preference;

pub use ensemble::{
    binary_entropy, disagreement, MemberReport, PreferenceTraining, RewardEnsemble, RewardMember,
    ENSEMBLE_CHECKPOINT_KIND,
};
pub use net::{
    BodyGrads, EncoderGrads, Encoders, RewardBody, RewardGrads, RewardNet, RewardNetConfig,
    RewardVariant,
};
pub use preference::{
    log_sigmoid, preference_loss, preference_loss_from_returns, preference_loss_grad,
    preference_probability, preference_probability_from_returns, segment_return, Preference,
    PreferenceDataset, PreferenceError, PreferenceTriplet,
};
