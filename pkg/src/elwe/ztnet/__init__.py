"""Zero-trust broker/agent pipeline with attack simulation and metrics."""

from .agent import Agent, AgentContext, ModelService, RoleRule, agent_validate, model_stub
from .attack import AttackMix, default_policy, run_attack_suite
from .cache import LruCache
from .keyring import KeyRing
from .metrics import MetricsLedger, metrics_report, summary_stats
from .pipeline import Pipeline, Response
from .policy import (Decision, Policy, Reason, Request, Token, Verdict, broker_validate,
                     make_proof, request_for)
from .transport import (InMemoryTransport, ReconnectPolicy, RetryPolicy, SimClock,
                        client_send, decode_frame, encode_frame)
