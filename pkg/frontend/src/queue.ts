// Optimistic submit queue with the server as source of truth.
//
// Decisions drain one at a time in FIFO order. A network failure keeps the
// decision at the head of the queue and retries with backoff; HTTP 409
// already_submitted counts as an acknowledgement (the server has the
// decision, only our ack got lost), so a forced reconnect can never double
// a decision or drop one. Other 4xx responses are permanent failures and
// are handed back to the caller instead of being retried.

import type { DecisionBody } from './types.js';

export interface QueueSnapshot {
  pending: number;
  inflight: boolean;
  offline: boolean;
  retryInMs: number | null;
  lastError: string | null;
}

export interface QueueHooks {
  // duplicate=true when the ack came from a 409 replay
  onAcked?(qaId: string, duplicate: boolean): void;
  onFailed?(qaId: string, status: number, code: string, message: string): void;
  onState?(snapshot: QueueSnapshot): void;
}

export interface QueueOptions {
  retryDelaysMs?: number[];
  // injectable for tests
  delay?: (ms: number) => Promise<void>;
}

const DEFAULT_DELAYS = [1000, 2000, 4000];

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

export class SubmitQueue {
  private readonly items: DecisionBody[] = [];
  private readonly queuedIds = new Set<string>();
  private readonly ackedIds = new Set<string>();
  private readonly delays: number[];
  private readonly delay: (ms: number) => Promise<void>;
  private draining = false;
  private inflight = false;
  private offline = false;
  private retryInMs: number | null = null;
  private lastError: string | null = null;

  constructor(
    private readonly post: (body: DecisionBody) => Promise<Response>,
    private readonly hooks: QueueHooks = {},
    options: QueueOptions = {},
  ) {
    this.delays = options.retryDelaysMs ?? DEFAULT_DELAYS;
    this.delay = options.delay ?? sleep;
  }

  snapshot(): QueueSnapshot {
    return {
      pending: this.items.length,
      inflight: this.inflight,
      offline: this.offline,
      retryInMs: this.retryInMs,
      lastError: this.lastError,
    };
  }

  acked(qaId: string): boolean {
    return this.ackedIds.has(qaId);
  }

  ackedCount(): number {
    return this.ackedIds.size;
  }

  // Idempotent: a decision already queued or acknowledged is not queued again.
  enqueue(body: DecisionBody): boolean {
    if (this.queuedIds.has(body.qa_id) || this.ackedIds.has(body.qa_id)) {
      return false;
    }
    this.items.push(body);
    this.queuedIds.add(body.qa_id);
    this.emitState();
    void this.drain();
    return true;
  }

  // Resolves once the queue is empty; safe to call while already draining.
  async drain(): Promise<void> {
    if (this.draining) return this.settled();
    this.draining = true;
    try {
      while (this.items.length > 0) {
        await this.deliver(this.items[0]);
        this.items.shift();
        this.emitState();
      }
    } finally {
      this.draining = false;
    }
  }

  private settled(): Promise<void> {
    return new Promise((resolve) => {
      const poll = () => {
        if (!this.draining && this.items.length === 0) resolve();
        else setTimeout(poll, 5);
      };
      poll();
    });
  }

  // Delivers one decision, retrying network failures forever with capped
  // backoff. Returns only when the decision reached a terminal state.
  private async deliver(body: DecisionBody): Promise<void> {
    let attempt = 0;
    for (;;) {
      let res: Response;
      try {
        this.inflight = true;
        this.emitState();
        res = await this.post(body);
      } catch (err) {
        this.inflight = false;
        const wait = this.delays[Math.min(attempt, this.delays.length - 1)];
        attempt += 1;
        this.offline = true;
        this.retryInMs = wait;
        this.lastError = err instanceof Error ? err.message : String(err);
        this.emitState();
        await this.delay(wait);
        continue;
      }
      this.inflight = false;
      this.offline = false;
      this.retryInMs = null;

      if (res.ok) {
        this.settleAck(body.qa_id, false);
        return;
      }
      const { code, message } = await readError(res);
      if (res.status === 409 && code === 'already_submitted') {
        this.settleAck(body.qa_id, true);
        return;
      }
      this.lastError = message;
      this.queuedIds.delete(body.qa_id);
      this.emitState();
      this.hooks.onFailed?.(body.qa_id, res.status, code, message);
      return;
    }
  }

  private settleAck(qaId: string, duplicate: boolean): void {
    this.queuedIds.delete(qaId);
    if (this.ackedIds.has(qaId)) return;
    this.ackedIds.add(qaId);
    this.lastError = null;
    this.emitState();
    this.hooks.onAcked?.(qaId, duplicate);
  }

  private emitState(): void {
    this.hooks.onState?.(this.snapshot());
  }
}

async function readError(res: Response): Promise<{ code: string; message: string }> {
  let code = 'http_error';
  let message = `HTTP ${res.status}`;
  try {
    const detail = (await res.json())?.detail;
    if (typeof detail === 'string') message = detail;
    else if (detail && typeof detail === 'object') {
      code = detail.error ?? code;
      message = detail.message ?? message;
    }
  } catch {
    // body was not JSON
  }
  return { code, message };
}
