pub mod atlas;
pub mod diffengine;
pub mod dreamer;
pub mod experiment;
pub mod imageio;
pub mod mazeworld;
pub mod nets;
