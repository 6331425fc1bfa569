// SPDX-License-Identifier: GPL-2.0-only
#include <linux/module.h>
#include <net/netfilter/nf_tables.h>

static LIST_HEAD(nf_tables_objects);

static bool nft_set_is_anonymous(const struct nft_set *set)
{
	return set->flags & NFT_SET_ANONYMOUS;
}

int nf_tables_newtable(struct sk_buff *skb, const struct nfnl_info *info,
		       const struct nlattr * const nla[])
{
	struct nft_table *table;

	table = kzalloc(sizeof(*table), GFP_KERNEL_ACCOUNT);
	if (table == NULL)
		return -ENOMEM;
	INIT_LIST_HEAD(&table->sets);
	return 0;
}

int nf_tables_newset(struct sk_buff *skb, const struct nfnl_info *info,
		     const struct nlattr * const nla[])
{
	struct nft_set *set;

	set = kvzalloc(sizeof(*set), GFP_KERNEL_ACCOUNT);
	if (!set)
		return -ENOMEM;
	INIT_LIST_HEAD(&set->bindings);
	set->use = 0;
	return 0;
}

int nf_tables_bind_set(const struct nft_ctx *ctx, struct nft_set *set,
		       struct nft_set_binding *binding)
{
	if (nft_set_is_anonymous(set) && !list_empty(&set->bindings))
		return -EBUSY;

	binding->chain = ctx->chain;
	list_add_tail_rcu(&binding->list, &set->bindings);
	set->use++;
	return 0;
}

void nft_set_destroy(const struct nft_ctx *ctx, struct nft_set *set)
{
	if (WARN_ON(set->use > 0))
		return;

	kfree(set->name);
	kvfree(set);
}

static void nf_tables_unbind_set(const struct nft_ctx *ctx, struct nft_set *set,
				 struct nft_set_binding *binding, bool event)
{
	list_del_rcu(&binding->list);
	set->use--;

	if (list_empty(&set->bindings) && nft_set_is_anonymous(set) &&
	    !set->use)
		nft_set_destroy(ctx, set);
}

void nf_tables_deactivate_set(const struct nft_ctx *ctx, struct nft_set *set,
			      struct nft_set_binding *binding)
{
	nf_tables_unbind_set(ctx, set, binding, true);
}
