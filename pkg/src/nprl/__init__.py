"""nprl: one small convnet trained by dueling DQN or supervised classification, scored by neural predictivity."""

__version__ = "0.1.0"
