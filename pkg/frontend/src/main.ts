// Application shell: login with a reviewer token, then loop over assigned
// cards. All state transitions go through ReviewSession/SubmitQueue; the
// DOM below is just paint.

import { ApiClient, ApiError } from './api.js';
import { actionForKey } from './keys.js';
import { SubmitQueue } from './queue.js';
import type { QueueSnapshot } from './queue.js';
import { ReviewSession } from './session.js';
import {
  renderCard,
  renderDone,
  renderProgress,
  renderQueueStrip,
  renderStats,
  escapeHtml,
} from './view.js';

type Tab = 'review' | 'stats';

interface AppState {
  api: ApiClient;
  session: ReviewSession;
  queue: SubmitQueue;
  tab: Tab;
  queueSnapshot: QueueSnapshot;
}

let state: AppState | null = null;

function root(): HTMLElement {
  const el = document.getElementById('app');
  if (!el) throw new Error('missing #app container');
  return el;
}

function renderLogin(message = ''): void {
  root().innerHTML = `
    <div class="login">
      <h1>charge review</h1>
      <form id="login-form">
        <label>reviewer id <input name="reviewer" autocomplete="username" required></label>
        <label>token <input name="token" type="password" required></label>
        <button type="submit">start reviewing</button>
      </form>
      ${message ? `<p class="login-error">${escapeHtml(message)}</p>` : ''}
    </div>`;
  const form = document.getElementById('login-form') as HTMLFormElement;
  form.addEventListener('submit', (event) => {
    event.preventDefault();
    const data = new FormData(form);
    void startSession(String(data.get('reviewer') ?? ''), String(data.get('token') ?? ''));
  });
}

async function startSession(reviewer: string, token: string): Promise<void> {
  const api = new ApiClient(token);
  let assignments;
  try {
    assignments = await api.assignments(reviewer);
  } catch (err) {
    const message =
      err instanceof ApiError ? `${err.status}: ${err.message}` : 'service unreachable';
    renderLogin(message);
    return;
  }
  sessionStorage.setItem('charge-reviewer', reviewer);
  const queue = new SubmitQueue((body) => api.postReview(body), {
    onAcked: (qaId) => {
      state?.session.handleAck(qaId);
      render();
    },
    onFailed: (qaId, _status, _code, message) => {
      state?.session.handleFailure(qaId, message);
      render();
    },
    onState: (snapshot) => {
      if (state) {
        state.queueSnapshot = snapshot;
        render();
      }
    },
  });
  const session = new ReviewSession(reviewer, assignments.assignments, queue);
  state = { api, session, queue, tab: 'review', queueSnapshot: queue.snapshot() };
  render();
}

function render(): void {
  if (!state) return;
  const { session, queue, api, tab } = state;
  const progress = session.progress();
  const entry = session.current();
  let body: string;
  if (tab === 'stats') {
    body = '<div class="stats-slot">loading stats…</div>';
  } else if (session.done()) {
    body = renderDone(session);
  } else if (entry) {
    body = renderCard(entry.card, entry.draft, api);
  } else {
    body = '<p class="empty">no cards assigned to this reviewer.</p>';
  }
  root().innerHTML = `
    <div class="topbar">
      <span class="brand">charge review · ${escapeHtml(session.reviewerId)}</span>
      ${renderProgress(progress.submitted, progress.assigned)}
      <nav>
        <button data-tab="review" ${tab === 'review' ? 'class="active"' : ''}>review</button>
        <button data-tab="stats" ${tab === 'stats' ? 'class="active"' : ''}>stats</button>
      </nav>
    </div>
    ${renderQueueStrip(state.queueSnapshot)}
    <main>${body}</main>`;
  wire();
  if (tab === 'stats') void fillStats();
  void queue;
}

function wire(): void {
  if (!state) return;
  const { session } = state;
  root()
    .querySelectorAll<HTMLButtonElement>('[data-tab]')
    .forEach((button) => {
      button.addEventListener('click', () => {
        if (!state) return;
        state.tab = button.dataset.tab as Tab;
        render();
      });
    });
  root()
    .querySelectorAll<HTMLButtonElement>('[data-verdict]')
    .forEach((button) => {
      button.addEventListener('click', () => {
        session.setVerdict(button.dataset.verdict as 'accept' | 'reject');
        render();
      });
    });
  root()
    .querySelectorAll<HTMLButtonElement>('[data-reason]')
    .forEach((button) => {
      button.addEventListener('click', () => {
        session.setReason(button.dataset.reason as never);
        render();
      });
    });
  root()
    .querySelector<HTMLButtonElement>('[data-submit]')
    ?.addEventListener('click', () => {
      session.submitCurrent();
      render();
    });
  root()
    .querySelectorAll<HTMLImageElement>('.chart-image')
    .forEach((img) => {
      img.addEventListener('click', () => img.classList.toggle('zoomed'));
    });
}

async function fillStats(): Promise<void> {
  if (!state) return;
  const slot = root().querySelector('.stats-slot');
  if (!slot) return;
  try {
    const stats = await state.api.stats();
    slot.innerHTML = renderStats(stats);
  } catch (err) {
    slot.innerHTML = `<p class="login-error">stats unavailable: ${escapeHtml(
      err instanceof Error ? err.message : String(err),
    )}</p>`;
  }
}

document.addEventListener('keydown', (event) => {
  if (!state || state.tab !== 'review') return;
  const action = actionForKey(event);
  if (!action) return;
  event.preventDefault();
  if (action.type === 'verdict') state.session.setVerdict(action.verdict);
  else if (action.type === 'reason') state.session.setReason(action.reason);
  else state.session.submitCurrent();
  render();
});

renderLogin();
