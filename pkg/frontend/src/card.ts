// Decision draft for one review card.
//
// Gating rules live here, not in the DOM: a draft cannot produce a submit
// body until a verdict is chosen, a reject additionally needs a reason, and
// once the server has acknowledged the decision the draft is frozen.

import { REJECTION_REASONS } from './types.js';
import type { DecisionBody, RejectionReason, Verdict } from './types.js';

export type DraftPhase = 'editing' | 'queued' | 'acked' | 'failed';

export class DecisionDraft {
  private verdictValue: Verdict | null = null;
  private reasonValue: RejectionReason | null = null;
  private phaseValue: DraftPhase = 'editing';
  private errorValue: string | null = null;

  constructor(public readonly qaId: string) {}

  get verdict(): Verdict | null {
    return this.verdictValue;
  }

  get reason(): RejectionReason | null {
    return this.reasonValue;
  }

  get phase(): DraftPhase {
    return this.phaseValue;
  }

  get error(): string | null {
    return this.errorValue;
  }

  // Editable only before submission; a failed draft reopens for correction.
  get editable(): boolean {
    return this.phaseValue === 'editing' || this.phaseValue === 'failed';
  }

  setVerdict(verdict: Verdict): boolean {
    if (!this.editable) return false;
    this.verdictValue = verdict;
    if (verdict === 'accept') this.reasonValue = null;
    this.phaseValue = 'editing';
    this.errorValue = null;
    return true;
  }

  setReason(reason: RejectionReason): boolean {
    if (!this.editable) return false;
    if (this.verdictValue !== 'reject') return false;
    if (!REJECTION_REASONS.includes(reason)) return false;
    this.reasonValue = reason;
    return true;
  }

  // Submit gate: verdict required, reject also requires a reason.
  canSubmit(): boolean {
    if (!this.editable) return false;
    if (this.verdictValue === 'accept') return true;
    return this.verdictValue === 'reject' && this.reasonValue !== null;
  }

  body(reviewerId: string): DecisionBody {
    if (!this.canSubmit()) {
      throw new Error(`draft for ${this.qaId} is not submittable`);
    }
    const body: DecisionBody = {
      qa_id: this.qaId,
      reviewer_id: reviewerId,
      verdict: this.verdictValue as Verdict,
    };
    if (this.verdictValue === 'reject') {
      body.reason = this.reasonValue as RejectionReason;
    }
    return body;
  }

  markQueued(): void {
    if (this.phaseValue === 'acked') return;
    this.phaseValue = 'queued';
    this.errorValue = null;
  }

  markAcked(): void {
    this.phaseValue = 'acked';
    this.errorValue = null;
  }

  markFailed(message: string): void {
    if (this.phaseValue === 'acked') return;
    this.phaseValue = 'failed';
    this.errorValue = message;
  }
}
