"""Categorical Bayesian sample inference for graph generation."""

from catbsi.belief import (BeliefState, CategoricalSample, Measurement, bayes_update,
                           encode_marginal, posterior_pmf, quantize, sample_prior, score)
from catbsi.graphs import GraphBelief, GraphSample, NodeCountDistribution, dataset_generate
from catbsi.kernels import BACKEND
from catbsi.model import ReconNet, load_checkpoint, save_checkpoint
from catbsi.rng import CounterRNG
from catbsi.samplers import SamplerConfig, Scheme, em_step, ou_step, sample
from catbsi.schedule import PrecisionSchedule, alpha, beta, beta_prime
from catbsi.training import TrainConfig, elbo_discrete, loss, train

__version__ = "0.1.0"
