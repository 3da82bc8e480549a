"""Background job runners.

Jobs are generators that yield after each unit of progress (one received
chunk for transfers). ``ThreadedRunner`` drives each job on its own thread.
``DeferredRunner`` queues them so a simulation can step them explicitly; a
caller waiting on a queued job drives it inline, which is how a blocking
resolve completes under a simulated clock.
"""
from __future__ import annotations

import threading


class Task:
    def __init__(self, job, on_done=None, name: str = ""):
        self._job = job
        self._on_done = on_done
        self._drive = threading.Lock()
        self.name = name
        self.done = threading.Event()
        self.error: BaseException | None = None
        self.result = None
        self.steps = 0

    def step(self) -> bool:
        """Advance once. Returns False when the job has finished."""
        with self._drive:
            if self.done.is_set():
                return False
            try:
                next(self._job)
                self.steps += 1
                return True
            except StopIteration as stop:
                self.result = stop.value
            except BaseException as exc:  # delivered to waiters
                self.error = exc
            self._finish()
            return False

    def _finish(self) -> None:
        if self._on_done is not None:
            try:
                self._on_done(self)
            finally:
                self.done.set()
        else:
            self.done.set()

    def run(self) -> None:
        while self.step():
            pass


class ThreadedRunner:
    def submit(self, job, on_done=None, name: str = "") -> Task:
        task = Task(job, on_done, name)
        threading.Thread(target=task.run, name=f"job-{name}", daemon=True).start()
        return task

    def wait(self, task: Task, timeout: float | None = None) -> bool:
        return task.done.wait(timeout)


class DeferredRunner:
    def __init__(self):
        self.queue: list[Task] = []
        self._lock = threading.Lock()

    def submit(self, job, on_done=None, name: str = "") -> Task:
        task = Task(job, on_done, name)
        with self._lock:
            self.queue.append(task)
        return task

    def pending(self) -> list[Task]:
        with self._lock:
            self.queue = [t for t in self.queue if not t.done.is_set()]
            return list(self.queue)

    def run_pending(self) -> int:
        """Drive every queued job to completion, in submission order."""
        count = 0
        while True:
            tasks = self.pending()
            if not tasks:
                return count
            for task in tasks:
                task.run()
                count += 1

    def wait(self, task: Task, timeout: float | None = None) -> bool:
        task.run()
        return task.done.is_set()
