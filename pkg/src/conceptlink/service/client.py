"""Small HTTP client for the service; the CLI is built on it."""

from __future__ import annotations

import time

import httpx

from ..errors import ConceptLinkError, NotFound, ProviderFailure


class ServiceError(ConceptLinkError):
    """An error response from the service, carrying its machine-readable code."""

    def __init__(self, status_code: int, code: str, message: str):
        super().__init__(f"[{status_code}] {code}: {message}")
        self.status_code = status_code
        self.code = code
        self.message = message


class ServiceClient:
    """Synchronous client for the /v1 API."""

    def __init__(self, base_url: str, client: httpx.Client | None = None, timeout: float = 60.0):
        self.base_url = base_url.rstrip("/")
        self._client = client or httpx.Client(timeout=timeout)

    def close(self) -> None:
        self._client.close()

    def __enter__(self) -> "ServiceClient":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()

    def _request(self, method: str, path: str, **kwargs) -> dict:
        try:
            response = self._client.request(method, f"{self.base_url}{path}", **kwargs)
        except httpx.HTTPError as exc:
            raise ProviderFailure(f"service request {path} failed: {exc}") from exc
        if response.status_code >= 400:
            try:
                error = response.json()["error"]
                raise ServiceError(response.status_code, error["code"], error["message"])
            except (ValueError, KeyError):
                raise ServiceError(response.status_code, "error", response.text) from None
        return response.json()

    def health(self) -> dict:
        return self._request("GET", "/v1/health")

    def submit_job(self, entries: list[dict], options: dict | None = None) -> str:
        payload: dict = {"entries": entries}
        if options:
            payload["options"] = options
        body = self._request("POST", "/v1/jobs", json=payload)
        return body["job_id"]

    def get_job(self, job_id: str) -> dict:
        return self._request("GET", f"/v1/jobs/{job_id}")

    def wait_for_job(self, job_id: str, timeout: float = 300.0, poll_interval: float = 0.05) -> dict:
        """Poll until the job leaves the queue; raises on timeout."""
        deadline = time.monotonic() + timeout
        while True:
            job = self.get_job(job_id)
            if job["state"] in ("done", "failed"):
                return job
            if time.monotonic() >= deadline:
                raise NotFound(f"job {job_id} did not finish within {timeout} seconds")
            time.sleep(poll_interval)

    def pending_reviews(self, page: int = 1, page_size: int = 50) -> dict:
        return self._request(
            "GET", "/v1/review/pending", params={"page": page, "page_size": page_size}
        )

    def decide(
        self, review_id: str, decision: str, reviewer: str, concepts: list[dict] | None = None
    ) -> dict:
        payload: dict = {"decision": decision, "reviewer": reviewer}
        if concepts is not None:
            payload["concepts"] = concepts
        return self._request("POST", f"/v1/review/{review_id}/decision", json=payload)

    def search(self, query: str, k: int = 10) -> dict:
        return self._request("GET", "/v1/search", params={"q": query, "k": k})
