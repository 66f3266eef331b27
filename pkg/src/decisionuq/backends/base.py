"""The sampling interface every generator implements."""
from __future__ import annotations

from .prompts import DEFAULT_TEMPLATE, PromptTemplate, render_prompt
from .types import GenRequest, GenSample, digest_of, now, request_key


class Backend:
    """Base class: subclasses implement ``_generate(prompt, request) -> list[str]``."""

    backend_id = "backend"
    template: PromptTemplate = DEFAULT_TEMPLATE

    def prompt_for(self, request: GenRequest) -> str:
        return render_prompt(request.context, request.template or self.template)

    def digest_for(self, request: GenRequest, prompt: str | None = None) -> str:
        if prompt is None:
            prompt = self.prompt_for(request)
        return digest_of(request_key(self.backend_id, prompt, request))

    def sample(self, request: GenRequest) -> list[GenSample]:
        prompt = self.prompt_for(request)
        digest = self.digest_for(request, prompt)
        texts = self._generate(prompt, request)
        if len(texts) != request.n_samples:
            raise RuntimeError(f"{self.backend_id} returned {len(texts)} texts for "
                               f"n_samples={request.n_samples}")
        ts = now()
        return [GenSample(text=t, backend_id=self.backend_id, request_digest=digest,
                          draw_index=i, timestamp=ts) for i, t in enumerate(texts)]

    def _generate(self, prompt: str, request: GenRequest) -> list[str]:
        raise NotImplementedError


class FunctionBackend(Backend):
    """Deterministic stub: ``fn(prompt, request, draw_index) -> text``."""

    def __init__(self, fn, backend_id="stub", template=DEFAULT_TEMPLATE):
        self.fn = fn
        self.backend_id = backend_id
        self.template = template
        self.prompts = []

    def _generate(self, prompt, request):
        self.prompts.append(prompt)
        return [str(self.fn(prompt, request, i)) for i in range(request.n_samples)]


class ScriptedBackend(Backend):
    """Returns canned replies in order, cycling when exhausted."""

    def __init__(self, replies, backend_id="scripted", template=DEFAULT_TEMPLATE):
        self.replies = list(replies)
        self.backend_id = backend_id
        self.template = template
        self.calls = 0
        self.prompts = []

    def _generate(self, prompt, request):
        self.prompts.append(prompt)
        out = []
        for _ in range(request.n_samples):
            out.append(self.replies[self.calls % len(self.replies)])
            self.calls += 1
        return out
