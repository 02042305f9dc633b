// DOM rendering. Everything shown on a card is copied verbatim from the
// service payload; the only client-side transformation is splitting the
// OCR value lines into table rows.

import type { ApiClient } from './api.js';
import { parseValuesText } from './ocr.js';
import type { QueueSnapshot } from './queue.js';
import type { ReviewSession } from './session.js';
import { REJECTION_REASONS } from './types.js';
import type { CardPayload, StatsResponse } from './types.js';
import type { DecisionDraft } from './card.js';

// Reviewer rubric shown as a reminder on every card.
const CHECKLIST_HINTS = ['clarity', 'accuracy', 'multimodal coherence', 'ethical considerations'];

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, '&amp;')
    .replace(/</g, '&lt;')
    .replace(/>/g, '&gt;')
    .replace(/"/g, '&quot;')
    .replace(/'/g, '&#39;');
}

function sourcePanels(card: CardPayload, api: ApiClient): string {
  const parts: string[] = [];
  for (const chunk of card.chunks) {
    parts.push(`
      <section class="panel chunk-panel">
        <header>text · ${escapeHtml(chunk.doc_id)} / ${escapeHtml(chunk.chunk_id)}</header>
        <p class="chunk-text">${escapeHtml(chunk.text)}</p>
      </section>`);
  }
  for (const chart of card.charts) {
    const ocr = parseValuesText(chart.values_text);
    const rows = ocr.rows
      .map(
        ([label, value]) =>
          `<tr><td>${escapeHtml(label)}</td><td>${escapeHtml(value)}</td></tr>`,
      )
      .join('');
    const raw = ocr.rawText
      ? `<pre class="raw-ocr">${escapeHtml(ocr.rawText)}</pre>`
      : '';
    parts.push(`
      <section class="panel chart-panel">
        <header>chart · ${escapeHtml(chart.doc_id)} / ${escapeHtml(chart.chart_id)}</header>
        <p class="caption">${escapeHtml(chart.caption)}</p>
        <div class="chart-side-by-side">
          <img class="chart-image" src="${escapeHtml(api.imageUrl(chart.image_url))}"
               alt="chart ${escapeHtml(chart.chart_id)}" title="click to zoom">
          <div class="ocr-block">
            <table class="ocr-table">
              <thead><tr><th>label</th><th>value</th></tr></thead>
              <tbody>${rows}</tbody>
            </table>
            ${raw}
          </div>
        </div>
      </section>`);
  }
  return parts.join('\n');
}

function decisionControls(draft: DecisionDraft): string {
  const verdict = draft.verdict;
  const reasons = REJECTION_REASONS.map((reason, i) => {
    const active = draft.reason === reason ? ' active' : '';
    const disabled = verdict !== 'reject' || !draft.editable ? ' disabled' : '';
    return `<button class="reason${active}" data-reason="${reason}"${disabled}>
      ${i + 1} · ${escapeHtml(reason)}</button>`;
  }).join('');
  const editDisabled = draft.editable ? '' : ' disabled';
  const submitDisabled = draft.canSubmit() ? '' : ' disabled';
  const phaseNote =
    draft.phase === 'acked'
      ? '<span class="phase ok">acknowledged</span>'
      : draft.phase === 'queued'
        ? '<span class="phase">queued…</span>'
        : draft.phase === 'failed'
          ? `<span class="phase bad">refused: ${escapeHtml(draft.error ?? '')}</span>`
          : '';
  return `
    <div class="decision">
      <div class="verdicts">
        <button class="verdict${verdict === 'accept' ? ' active' : ''}"
                data-verdict="accept"${editDisabled}>A · accept</button>
        <button class="verdict${verdict === 'reject' ? ' active' : ''}"
                data-verdict="reject"${editDisabled}>R · reject</button>
      </div>
      <div class="reasons">${reasons}</div>
      <button class="submit" data-submit${submitDisabled}>submit (Enter)</button>
      ${phaseNote}
    </div>`;
}

export function renderCard(card: CardPayload, draft: DecisionDraft, api: ApiClient): string {
  const pair = card.pair;
  const keypoints = pair.gt_keypoints
    .map((kp) => `<li>${escapeHtml(kp)}</li>`)
    .join('');
  const hints = CHECKLIST_HINTS.map((h) => `<li>${escapeHtml(h)}</li>`).join('');
  return `
    <article class="card" data-qa-id="${escapeHtml(pair.qa_id)}">
      <div class="qa-column">
        <header class="card-head">
          <span class="category">${escapeHtml(pair.scope)} : ${escapeHtml(pair.modality)}</span>
          <span class="hops">${pair.hops} hop${pair.hops === 1 ? '' : 's'}</span>
          <span class="qa-id">${escapeHtml(pair.qa_id)}</span>
        </header>
        <h2 class="question">${escapeHtml(pair.question)}</h2>
        <p class="answer">${escapeHtml(pair.answer)}</p>
        <h3>ground-truth keypoints</h3>
        <ul class="keypoints">${keypoints}</ul>
        <details class="checklist"><summary>review checklist</summary>
          <ul>${hints}</ul>
        </details>
        ${decisionControls(draft)}
      </div>
      <div class="source-column">${sourcePanels(card, api)}</div>
    </article>`;
}

export function renderProgress(submitted: number, assigned: number): string {
  const pct = assigned > 0 ? Math.round((100 * submitted) / assigned) : 0;
  return `
    <div class="progress" role="progressbar" aria-valuenow="${submitted}"
         aria-valuemax="${assigned}">
      <div class="progress-fill" style="width: ${pct}%"></div>
      <span class="progress-label">${submitted} / ${assigned} submitted</span>
    </div>`;
}

export function renderQueueStrip(snapshot: QueueSnapshot): string {
  if (snapshot.pending === 0 && !snapshot.offline && snapshot.lastError === null) {
    return '';
  }
  const bits: string[] = [];
  if (snapshot.pending > 0) {
    bits.push(`${snapshot.pending} decision${snapshot.pending === 1 ? '' : 's'} pending`);
  }
  if (snapshot.offline) {
    const wait = snapshot.retryInMs !== null ? ` (retrying in ${snapshot.retryInMs / 1000}s)` : '';
    bits.push(`connection lost${wait}`);
  }
  if (snapshot.lastError !== null && !snapshot.offline) {
    bits.push(escapeHtml(snapshot.lastError));
  }
  const tone = snapshot.offline ? 'offline' : 'busy';
  return `<div class="queue-strip ${tone}">${bits.join(' — ')}</div>`;
}

export function renderStats(stats: StatsResponse): string {
  const kappa = stats.kappa === null ? 'n/a (needs fully rated items)' : stats.kappa.toFixed(4);
  const reasonRows = Object.entries(stats.reject_reasons)
    .map(([reason, count]) => `<tr><td>${escapeHtml(reason)}</td><td>${count}</td></tr>`)
    .join('');
  const d = stats.dataset;
  return `
    <div class="stats">
      <h2>review progress</h2>
      ${renderProgress(stats.progress.submitted, stats.progress.total)}
      <dl>
        <dt>agreement (Fleiss κ)</dt><dd>${kappa}</dd>
        <dt>items rated by all reviewers</dt><dd>${stats.rated_items}</dd>
        <dt>dataset</dt>
        <dd>${d.total} total · ${d.pending} pending · ${d.accepted} accepted · ${d.rejected} rejected</dd>
      </dl>
      <h3>rejection reasons</h3>
      <table class="reason-table">
        <thead><tr><th>reason</th><th>count</th></tr></thead>
        <tbody>${reasonRows || '<tr><td colspan="2">none yet</td></tr>'}</tbody>
      </table>
    </div>`;
}

export function renderDone(session: ReviewSession): string {
  return `
    <div class="done">
      <h2>all ${session.cards.length} cards reviewed</h2>
      <p>every decision is acknowledged by the server. Check the stats tab
         for agreement once the other reviewers finish.</p>
    </div>`;
}
