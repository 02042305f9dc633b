import { describe, expect, it } from 'vitest';

import { DecisionDraft } from '../src/card.js';

describe('decision gating', () => {
  it('refuses to submit before a verdict is chosen', () => {
    const draft = new DecisionDraft('qa1');
    expect(draft.canSubmit()).toBe(false);
    expect(() => draft.body('ann')).toThrow(/not submittable/);
  });

  it('accept submits without a reason', () => {
    const draft = new DecisionDraft('qa1');
    draft.setVerdict('accept');
    expect(draft.canSubmit()).toBe(true);
    expect(draft.body('ann')).toEqual({
      qa_id: 'qa1',
      reviewer_id: 'ann',
      verdict: 'accept',
    });
  });

  it('reject stays blocked until a reason is chosen', () => {
    const draft = new DecisionDraft('qa1');
    draft.setVerdict('reject');
    expect(draft.canSubmit()).toBe(false);
    expect(draft.setReason('ocr_error')).toBe(true);
    expect(draft.canSubmit()).toBe(true);
    expect(draft.body('ann').reason).toBe('ocr_error');
  });

  it('reasons are only selectable while the verdict is reject', () => {
    const draft = new DecisionDraft('qa1');
    expect(draft.setReason('other')).toBe(false);
    draft.setVerdict('accept');
    expect(draft.setReason('other')).toBe(false);
    expect(draft.reason).toBeNull();
  });

  it('switching back to accept clears the chosen reason', () => {
    const draft = new DecisionDraft('qa1');
    draft.setVerdict('reject');
    draft.setReason('redundant');
    draft.setVerdict('accept');
    expect(draft.reason).toBeNull();
    draft.setVerdict('reject');
    expect(draft.canSubmit()).toBe(false);
  });
});

describe('draft lifecycle', () => {
  it('freezes after server acknowledgement', () => {
    const draft = new DecisionDraft('qa1');
    draft.setVerdict('accept');
    draft.markQueued();
    draft.markAcked();
    expect(draft.setVerdict('reject')).toBe(false);
    expect(draft.setReason('other')).toBe(false);
    expect(draft.verdict).toBe('accept');
    expect(draft.reason).toBeNull();
    expect(draft.canSubmit()).toBe(false);
    expect(draft.phase).toBe('acked');
  });

  it('is not editable while queued', () => {
    const draft = new DecisionDraft('qa1');
    draft.setVerdict('accept');
    draft.markQueued();
    expect(draft.setVerdict('reject')).toBe(false);
    expect(draft.canSubmit()).toBe(false);
  });

  it('reopens for correction after a permanent refusal', () => {
    const draft = new DecisionDraft('qa1');
    draft.setVerdict('reject');
    draft.setReason('other');
    draft.markQueued();
    draft.markFailed('no assignment of qa1 to ann');
    expect(draft.phase).toBe('failed');
    expect(draft.error).toContain('no assignment');
    expect(draft.setVerdict('accept')).toBe(true);
    expect(draft.phase).toBe('editing');
    expect(draft.error).toBeNull();
  });

  it('a late failure cannot unfreeze an acknowledged decision', () => {
    const draft = new DecisionDraft('qa1');
    draft.setVerdict('accept');
    draft.markAcked();
    draft.markFailed('spurious');
    draft.markQueued();
    expect(draft.phase).toBe('acked');
  });
});
