"""Multi-turn tool-integrated rollouts against a policy endpoint."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .clients import ChatMessage, ImagePart, Role, Sampling, TextPart
from .errors import ChartTIRError, PartialGroupError, PolicyFailure
from .model import ChartImage, GroupSample, ImageObs, Observation, Step, Termination, TextObs, Trajectory
from .prompts import FORMAT_ERROR_NOTICE, OBSERVATION_FOOTER, OBSERVATION_HEADER, SYSTEM_PROMPT
from .sandbox import Sandbox
from .tools import ToolConfig, run_tool
from .turns import parse_turn

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RolloutConfig:
    max_assistant_turns: int = 4
    max_parse_failures: int = 2
    group_size: int = 8
    sampling: Sampling = field(default_factory=lambda: Sampling(temperature=1.0))
    tool_cfg: ToolConfig = field(default_factory=ToolConfig)
    concurrency: int = 8
    # fraction of failed rollouts a group tolerates before it is rejected
    failure_threshold: float = 0.5
    system_prompt: str = SYSTEM_PROMPT

    def __post_init__(self):
        if self.max_assistant_turns < 1:
            raise ValueError("max_assistant_turns must be >= 1")
        if self.max_parse_failures < 1:
            raise ValueError("max_parse_failures must be >= 1")
        if self.group_size < 2:
            raise ValueError("group_size must be >= 2")


def initial_messages(image: ChartImage, question: str, system_prompt: str = SYSTEM_PROMPT) -> list[ChatMessage]:
    return [
        ChatMessage.text(Role.SYSTEM, system_prompt),
        ChatMessage(Role.USER, (ImagePart(image), TextPart(question))),
    ]


def observation_message(obs: Observation) -> ChatMessage:
    if isinstance(obs, ImageObs):
        img = obs.image
        return ChatMessage(
            Role.USER,
            (
                TextPart(f"{OBSERVATION_HEADER}\ncropped region ({img.width}x{img.height}):"),
                ImagePart(img),
                TextPart(OBSERVATION_FOOTER),
            ),
        )
    if isinstance(obs, TextObs):
        body = obs.content + ("\n[output truncated]" if obs.truncated else "")
    else:
        body = f"tool error ({obs.error.value}): {obs.message}"
    return ChatMessage.text(Role.USER, f"{OBSERVATION_HEADER}\n{body}\n{OBSERVATION_FOOTER}")


def run_trajectory(
    policy,
    image: ChartImage,
    question: str,
    cfg: RolloutConfig | None = None,
    sandbox=None,
    sampling: Sampling | None = None,
) -> tuple[Trajectory, list[str]]:
    """Drive one episode until an answer or a budget runs out.

    Raises PolicyFailure if the endpoint fails; the partial trajectory and
    raw turns are attached to the exception.
    """
    cfg = cfg or RolloutConfig()
    sandbox = sandbox if sandbox is not None else Sandbox()
    sampling = sampling or cfg.sampling
    messages = initial_messages(image, question, cfg.system_prompt)
    steps: list[Step] = []
    raw_turns: list[str] = []
    parse_failures = 0

    def finish(term: Termination, answer=None, final_reasoning=""):
        return Trajectory(image, question, tuple(steps), final_reasoning, answer, term), raw_turns

    for _ in range(cfg.max_assistant_turns):
        try:
            reply = policy.complete(list(messages), sampling)
        except ChartTIRError as e:
            traj, raw = finish(Termination.POLICY_FAILURE)
            raise PolicyFailure(f"policy call failed: {e.code}: {e}", traj, raw) from e
        raw_turns.append(reply.text)
        messages.append(ChatMessage.text(Role.ASSISTANT, reply.text))

        turn = parse_turn(reply.text)
        if turn.violations:
            parse_failures += 1
            log.debug("turn violations: %s", [v.value for v in turn.violations])
            if parse_failures >= cfg.max_parse_failures:
                return finish(Termination.PARSE_FAILURE_LIMIT)
            messages.append(ChatMessage.text(Role.USER, FORMAT_ERROR_NOTICE))
            continue
        if turn.final_answer is not None:
            return finish(Termination.ANSWER, turn.final_answer, turn.reasoning)

        obs = run_tool(image, turn.tool_call, cfg.tool_cfg, sandbox)
        steps.append(Step(turn.reasoning, turn.tool_call, obs))
        messages.append(observation_message(obs))

    return finish(Termination.TURN_LIMIT)


def run_group(policy, image: ChartImage, question: str, cfg: RolloutConfig | None = None, sandbox=None) -> GroupSample:
    """Sample ``cfg.group_size`` independent rollouts of one prompt.

    Rewards and advantages are left unset. Failed members are kept with
    ``terminated_by=POLICY_FAILURE`` and flagged in ``GroupSample.failed``.
    """
    cfg = cfg or RolloutConfig()
    sandbox = sandbox if sandbox is not None else Sandbox()

    def one(_):
        try:
            traj, raw = run_trajectory(policy, image, question, cfg, sandbox)
            return traj, raw, False
        except PolicyFailure as e:
            log.warning("rollout failed: %s", e)
            return e.trajectory, e.raw_turns, True

    workers = max(1, min(cfg.concurrency, cfg.group_size))
    if workers == 1:
        results = [one(g) for g in range(cfg.group_size)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, range(cfg.group_size)))

    group = GroupSample(
        trajectories=[r[0] for r in results],
        raw_turns=[r[1] for r in results],
        failed=[r[2] for r in results],
    )
    n_failed = sum(group.failed)
    if n_failed > cfg.failure_threshold * cfg.group_size:
        raise PartialGroupError(f"{n_failed}/{cfg.group_size} rollouts failed", group)
    return group


def conversation(traj: Trajectory, raw_turns: list[str], system_prompt: str = SYSTEM_PROMPT) -> list[ChatMessage]:
    """Rebuild the message list of a format-compliant rollout."""
    messages = initial_messages(traj.image, traj.question, system_prompt)
    for i, raw in enumerate(raw_turns):
        messages.append(ChatMessage.text(Role.ASSISTANT, raw))
        if i < len(traj.steps):
            messages.append(observation_message(traj.steps[i].observation))
    return messages

