// One reviewer's seat: a deck of assigned cards, a decision draft per card,
// and a cursor over the cards still needing attention. Submissions flow
// through the queue; a card only counts as done once the server has
// acknowledged it.

import { DecisionDraft } from './card.js';
import type { SubmitQueue } from './queue.js';
import type { CardPayload, RejectionReason, Verdict } from './types.js';

export interface SessionProgress {
  submitted: number;
  assigned: number;
}

export class ReviewSession {
  private readonly drafts = new Map<string, DecisionDraft>();
  private cursor = 0;

  constructor(
    public readonly reviewerId: string,
    public readonly cards: CardPayload[],
    private readonly queue: SubmitQueue,
  ) {
    for (const card of cards) {
      this.drafts.set(card.pair.qa_id, new DecisionDraft(card.pair.qa_id));
    }
  }

  draftFor(qaId: string): DecisionDraft | undefined {
    return this.drafts.get(qaId);
  }

  current(): { card: CardPayload; draft: DecisionDraft } | null {
    if (this.cards.length === 0) return null;
    const card = this.cards[this.cursor];
    const draft = this.drafts.get(card.pair.qa_id);
    return draft ? { card, draft } : null;
  }

  // Server-acknowledged decisions over cards assigned to this seat.
  progress(): SessionProgress {
    return { submitted: this.queue.ackedCount(), assigned: this.cards.length };
  }

  done(): boolean {
    return this.cards.length > 0 && this.queue.ackedCount() >= this.cards.length;
  }

  setVerdict(verdict: Verdict): boolean {
    const entry = this.current();
    return entry ? entry.draft.setVerdict(verdict) : false;
  }

  setReason(reason: RejectionReason): boolean {
    const entry = this.current();
    return entry ? entry.draft.setReason(reason) : false;
  }

  // Queues the current draft if its gate allows, then moves on to the next
  // card still awaiting a decision. Returns false when the gate refuses.
  submitCurrent(): boolean {
    const entry = this.current();
    if (!entry || !entry.draft.canSubmit()) return false;
    const body = entry.draft.body(this.reviewerId);
    entry.draft.markQueued();
    this.queue.enqueue(body);
    this.advance();
    return true;
  }

  handleAck(qaId: string): void {
    this.drafts.get(qaId)?.markAcked();
  }

  // A permanently refused decision reopens its card and pulls the cursor
  // back so the problem is in front of the reviewer.
  handleFailure(qaId: string, message: string): void {
    const draft = this.drafts.get(qaId);
    if (!draft) return;
    draft.markFailed(message);
    const index = this.cards.findIndex((card) => card.pair.qa_id === qaId);
    if (index >= 0) this.cursor = index;
  }

  next(): void {
    this.step(1);
  }

  prev(): void {
    this.step(-1);
  }

  private step(direction: 1 | -1): void {
    const n = this.cards.length;
    if (n === 0) return;
    this.cursor = (this.cursor + direction + n) % n;
  }

  // Advances to the nearest card that still wants input; stays put if the
  // whole deck is queued or acknowledged.
  private advance(): void {
    const n = this.cards.length;
    for (let offset = 1; offset <= n; offset += 1) {
      const i = (this.cursor + offset) % n;
      const draft = this.drafts.get(this.cards[i].pair.qa_id);
      if (draft && draft.editable) {
        this.cursor = i;
        return;
      }
    }
  }
}
